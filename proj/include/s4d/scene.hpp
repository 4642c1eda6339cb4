// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "s4d/camera.hpp"
#include "s4d/core.hpp"
#include "s4d/deform.hpp"
#include "s4d/gaussian.hpp"
#include "s4d/mlp.hpp"

namespace s4d {

// A full scene: Gaussians (optionally with style MLPs), the deformation
// field, cameras, and normalized time range [0,1].
struct Scene {
    std::vector<Gaussian> gaussians;
    std::vector<TinyMlpParams> style_mlps; // empty, or one per Gaussian
    bool has_sh1 = false;
    DeformationField deformation;
    std::vector<Camera> cameras;
    float time_range[2] = {0.f, 1.f};
    std::array<float, 3> background{0, 0, 0};
    // Fixed normalizer for the MLP depth input; constant during training.
    float scene_radius = 1.f;

    bool has_style() const { return !style_mlps.empty(); }
};

inline void validate(const Scene& s) {
    require(!s.gaussians.empty(), "scene has no gaussians");
    for (std::size_t i = 0; i < s.gaussians.size(); ++i) validate(s.gaussians[i], i);
    if (!s.style_mlps.empty()) {
        require(s.style_mlps.size() == s.gaussians.size(),
                "style MLP count does not match gaussian count");
        for (std::size_t i = 0; i < s.style_mlps.size(); ++i)
            require(s.style_mlps[i].finite(), "style MLP " + std::to_string(i) + " has non-finite parameters");
    }
    for (const Camera& c : s.cameras) validate(c);
    require(s.time_range[0] >= 0.f && s.time_range[1] <= 1.f && s.time_range[0] <= s.time_range[1],
            "time range must lie within [0,1]");
    require(s.scene_radius > 0.f, "scene radius must be positive");
}

inline float compute_scene_radius(const std::vector<Gaussian>& gs) {
    double r = 0;
    for (const Gaussian& g : gs) r = std::max(r, norm(g.mu_v()));
    return float(std::max(r, 1e-6));
}

// ---------------------------------------------------------------- container

// "S4DS" | u32 version | u32 flags | u64 count | per-gaussian packed f32
// fields in declared order | deformation block | scene meta | cameras.
namespace detail {

constexpr std::uint32_t kSceneVersion = 1;
constexpr std::uint32_t kFlagSh1 = 1u;
constexpr std::uint32_t kFlagMlps = 2u;

struct Writer {
    std::ofstream f;
    explicit Writer(const std::string& path) : f(path, std::ios::binary) {
        require(f.good(), "cannot open for write: " + path);
    }
    void bytes(const void* p, std::size_t n) { f.write(static_cast<const char*>(p), std::streamsize(n)); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f32s(const float* p, std::size_t n) { bytes(p, n * 4); }
};

struct Reader {
    std::ifstream f;
    std::string path;
    explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
        require(f.good(), "cannot open: " + p);
    }
    void bytes(void* p, std::size_t n) {
        f.read(static_cast<char*>(p), std::streamsize(n));
        require(std::size_t(f.gcount()) == n, "truncated scene file: " + path);
    }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    float f32() { float v; bytes(&v, 4); return v; }
    void f32s(float* p, std::size_t n) { bytes(p, n * 4); }
};

} // namespace detail

inline void save_scene(const Scene& s, const std::string& path) {
    detail::Writer w(path);
    w.bytes("S4DS", 4);
    w.u32(detail::kSceneVersion);
    std::uint32_t flags = (s.has_sh1 ? detail::kFlagSh1 : 0) | (s.has_style() ? detail::kFlagMlps : 0);
    w.u32(flags);
    w.u64(s.gaussians.size());
    for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
        const Gaussian& g = s.gaussians[i];
        w.f32s(g.mu.data(), 3);
        w.f32s(g.rot.data(), 4);
        w.f32s(g.scale.data(), 3);
        w.f32(g.opacity);
        w.f32s(g.color0.data(), 3);
        if (s.has_sh1) w.f32s(g.color1.data(), 9);
        if (s.has_style()) {
            float flat[TinyMlpParams::kCount];
            s.style_mlps[i].flatten(flat);
            w.f32s(flat, TinyMlpParams::kCount);
        }
    }
    w.u32(std::uint32_t(s.deformation.encoding_frequencies));
    w.u32(std::uint32_t(s.deformation.hidden));
    w.u64(s.deformation.params.size());
    w.f32s(s.deformation.params.data(), s.deformation.params.size());
    w.f32s(s.time_range, 2);
    w.f32s(s.background.data(), 3);
    w.f32(s.scene_radius);
    w.u64(s.cameras.size());
    for (const Camera& c : s.cameras) {
        w.f32s(c.rotation.data(), 9);
        w.f32s(c.translation.data(), 3);
        w.f32(c.fx); w.f32(c.fy); w.f32(c.cx); w.f32(c.cy);
        w.u32(std::uint32_t(c.width));
        w.u32(std::uint32_t(c.height));
    }
    require(w.f.good(), "write failed: " + path);
}

inline Scene load_scene(const std::string& path) {
    detail::Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    require(std::memcmp(magic, "S4DS", 4) == 0, "bad magic bytes, not a scene container: " + path);
    std::uint32_t version = r.u32();
    require(version == detail::kSceneVersion,
            "scene container version mismatch in " + path + " (got " + std::to_string(version) + ")");
    std::uint32_t flags = r.u32();
    std::uint64_t count = r.u64();
    require(count > 0 && count < (1ull << 32), "bad gaussian count in " + path);

    Scene s;
    s.has_sh1 = (flags & detail::kFlagSh1) != 0;
    bool mlps = (flags & detail::kFlagMlps) != 0;
    s.gaussians.resize(count);
    if (mlps) s.style_mlps.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Gaussian& g = s.gaussians[i];
        r.f32s(g.mu.data(), 3);
        r.f32s(g.rot.data(), 4);
        r.f32s(g.scale.data(), 3);
        g.opacity = r.f32();
        r.f32s(g.color0.data(), 3);
        if (s.has_sh1) r.f32s(g.color1.data(), 9);
        if (mlps) {
            float flat[TinyMlpParams::kCount];
            r.f32s(flat, TinyMlpParams::kCount);
            s.style_mlps[i] = TinyMlpParams::unflatten(flat);
        }
    }
    s.deformation.encoding_frequencies = int(r.u32());
    s.deformation.hidden = int(r.u32());
    std::uint64_t np = r.u64();
    require(np < (1ull << 28), "bad deformation parameter count in " + path);
    if (np) {
        require(np == std::uint64_t(s.deformation.param_count()),
                "deformation parameter count mismatch in " + path);
        s.deformation.params.resize(np);
        r.f32s(s.deformation.params.data(), np);
    }
    r.f32s(s.time_range, 2);
    r.f32s(s.background.data(), 3);
    s.scene_radius = r.f32();
    std::uint64_t ncams = r.u64();
    require(ncams < (1ull << 20), "bad camera count in " + path);
    s.cameras.resize(ncams);
    for (Camera& c : s.cameras) {
        r.f32s(c.rotation.data(), 9);
        r.f32s(c.translation.data(), 3);
        c.fx = r.f32(); c.fy = r.f32(); c.cx = r.f32(); c.cy = r.f32();
        c.width = int(r.u32());
        c.height = int(r.u32());
    }
    validate(s);
    return s;
}

// ---------------------------------------------------------------- init

struct ColoredPoint {
    std::array<float, 3> position;
    std::array<float, 3> color;
};

// Builds an initial scene from a point cloud: uniform subsample down to
// count_target, scale from the mean nearest-neighbor distance, opacity 0.5,
// zero-initialized deformation.
inline Scene init_from_points(const std::vector<ColoredPoint>& points, std::size_t count_target,
                              std::uint64_t seed = 1) {
    require(!points.empty(), "init_from_points: empty point list");
    require(count_target >= 1, "init_from_points: count_target must be >= 1");

    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (points.size() > count_target) {
        Rng rng(seed, 3);
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(std::uint32_t(i + 1))]);
        order.resize(count_target);
        std::sort(order.begin(), order.end());
    }

    std::vector<ColoredPoint> kept;
    kept.reserve(order.size());
    for (std::size_t i : order) kept.push_back(points[i]);

    // Mean nearest-neighbor distance over the kept set. O(n^2) is fine at
    // the few-thousand-point scale this targets.
    double mean_nn = 0.1;
    if (kept.size() > 1) {
        double acc = 0;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (std::size_t j = 0; j < kept.size(); ++j) {
                if (i == j) continue;
                double dx = double(kept[i].position[0]) - kept[j].position[0];
                double dy = double(kept[i].position[1]) - kept[j].position[1];
                double dz = double(kept[i].position[2]) - kept[j].position[2];
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            acc += std::sqrt(best);
        }
        mean_nn = std::max(acc / double(kept.size()), 1e-4);
    }

    Scene s;
    s.gaussians.reserve(kept.size());
    for (const ColoredPoint& p : kept) {
        Gaussian g;
        g.mu = p.position;
        g.color0 = {std::clamp(p.color[0], 0.001f, 0.999f),
                    std::clamp(p.color[1], 0.001f, 0.999f),
                    std::clamp(p.color[2], 0.001f, 0.999f)};
        g.scale = {float(mean_nn), float(mean_nn), float(mean_nn)};
        g.opacity = 0.5f;
        s.gaussians.push_back(g);
    }
    // Zero output layer: the field starts as the identity map.
    s.deformation = DeformationField::init(seed);
    s.scene_radius = compute_scene_radius(s.gaussians);
    return s;
}

} // namespace s4d
