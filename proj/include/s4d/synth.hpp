// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/flow.hpp"
#include "s4d/rasterizer.hpp"
#include "s4d/rng.hpp"
#include "s4d/scene.hpp"
#include "s4d/trainer.hpp"

namespace s4d {

struct SynthSpec {
    int n_gaussians = 200;
    int n_cameras = 5;
    int n_times = 20;
    int resolution = 64;
    enum class Motion { Orbit, Oscillate, Static } motion = Motion::Orbit;
    std::uint64_t palette_seed = 1;
};

inline void validate(const SynthSpec& s) {
    require(s.n_gaussians >= 1 && s.n_cameras >= 1 && s.n_times >= 1, "synth: counts must be >= 1");
    require(s.resolution >= 16 && s.resolution % 16 == 0,
            "synth: resolution must be a positive multiple of 16");
}

inline SynthSpec::Motion motion_from_string(const std::string& s) {
    if (s == "orbit") return SynthSpec::Motion::Orbit;
    if (s == "oscillate") return SynthSpec::Motion::Oscillate;
    if (s == "static") return SynthSpec::Motion::Static;
    throw ValidationError("unknown motion kind: " + s);
}

// Analytic motion constants.
constexpr double kOrbitAngle = 0.5;      // radians of z-rotation over t in [0,1]
constexpr double kOscAmplitude = 0.12;   // scene units along x

struct SynthResult {
    Scene scene;                    // canonical scene (no learnable motion)
    std::vector<double> times;      // normalized, n_times entries
    std::vector<Image> frames;      // cam-major: cam * n_times + t
    std::vector<FlowField> flows;   // cam-major pairs: cam * (n_times-1) + t
};

namespace detail {

inline Vec3 synth_position(const Gaussian& g, SynthSpec::Motion motion, double t, std::size_t index) {
    Vec3 p = g.mu_v();
    switch (motion) {
        case SynthSpec::Motion::Static:
            return p;
        case SynthSpec::Motion::Orbit: {
            double a = kOrbitAngle * t;
            double c = std::cos(a), s = std::sin(a);
            return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
        }
        case SynthSpec::Motion::Oscillate: {
            double phase = 2.0 * 3.14159265358979323846 * double(index % 8) / 8.0;
            return {p.x + kOscAmplitude * std::sin(2.0 * 3.14159265358979323846 * t + phase), p.y, p.z};
        }
    }
    return p;
}

inline Scene scene_at_time(const Scene& canonical, const SynthSpec& spec, double t) {
    Scene out = canonical;
    for (std::size_t i = 0; i < out.gaussians.size(); ++i) {
        Vec3 p = synth_position(canonical.gaussians[i], spec.motion, t, i);
        out.gaussians[i].mu = {float(p.x), float(p.y), float(p.z)};
    }
    return out;
}

} // namespace detail

// Generates a dynamic multi-view scene with analytic ground truth: Gaussians
// seeded in the unit sphere, cameras on a ring, frames rendered with the
// module rasterizer, and image-space flow derived from the per-pixel
// dominant contributor's projected motion.
inline SynthResult generate(const SynthSpec& spec) {
    validate(spec);
    Rng rng(spec.palette_seed, 23);

    SynthResult res;
    Scene& scene = res.scene;
    for (int i = 0; i < spec.n_gaussians; ++i) {
        Gaussian g;
        // Uniform in the unit sphere.
        double r = std::cbrt(rng.uniform());
        double z = rng.uniform(-1, 1);
        double phi = rng.uniform(0, 2 * 3.14159265358979323846);
        double s = std::sqrt(std::max(0.0, 1 - z * z));
        g.mu = {float(r * s * std::cos(phi)), float(r * s * std::sin(phi)), float(r * z)};
        double q[4], n2 = 0;
        for (double& qq : q) { qq = rng.normal(); n2 += qq * qq; }
        double nn = std::sqrt(std::max(n2, 1e-12));
        for (int k = 0; k < 4; ++k) g.rot[k] = float(q[k] / nn);
        double fn2 = 0;
        for (float qq : g.rot) fn2 += double(qq) * qq;
        for (float& qq : g.rot) qq = float(double(qq) / std::sqrt(fn2));
        for (int k = 0; k < 3; ++k) g.scale[k] = float(rng.uniform(0.05, 0.12));
        g.opacity = float(rng.uniform(0.55, 0.95));
        // Saturated palette.
        int hue = int(rng.below(6));
        double hi = rng.uniform(0.7, 1.0), lo = rng.uniform(0.05, 0.3), mid = rng.uniform(0.2, 0.8);
        double rgb[3] = {lo, lo, lo};
        rgb[hue % 3] = hi;
        rgb[(hue + 1 + hue / 3) % 3] = hue >= 3 ? mid : lo;
        g.color0 = {float(rgb[0]), float(rgb[1]), float(rgb[2])};
        scene.gaussians.push_back(g);
    }
    float f = 1.3f * float(spec.resolution);
    float cxy = float(spec.resolution - 1) / 2.0f;
    for (int c = 0; c < spec.n_cameras; ++c) {
        double az = 2.0 * 3.14159265358979323846 * double(c) / double(spec.n_cameras);
        Vec3 eye{3.0 * std::cos(az), 3.0 * std::sin(az), 0.35 * ((c % 3) - 1)};
        scene.cameras.push_back(look_at(eye, {0, 0, 0}, f, f, cxy, cxy, spec.resolution,
                                        spec.resolution));
    }
    scene.background = {0.06f, 0.06f, 0.09f};
    scene.scene_radius = compute_scene_radius(scene.gaussians);

    res.times.resize(spec.n_times);
    for (int t = 0; t < spec.n_times; ++t)
        res.times[t] = spec.n_times > 1 ? double(t) / double(spec.n_times - 1) : 0.0;

    res.frames.resize(std::size_t(spec.n_cameras) * spec.n_times);
    std::vector<RenderCache> caches(res.frames.size());
    parallel_for(res.frames.size(), [&](std::size_t i) {
        int cam = int(i) / spec.n_times;
        int t = int(i) % spec.n_times;
        Scene at = detail::scene_at_time(scene, spec, res.times[t]);
        res.frames[i] = render(at, scene.cameras[cam], res.times[t], RasterConfig{}, false,
                               &caches[i]).image;
    });

    // Analytic flow from the dominant contributor's projected displacement.
    if (spec.n_times > 1) {
        res.flows.resize(std::size_t(spec.n_cameras) * (spec.n_times - 1));
        parallel_for(res.flows.size(), [&](std::size_t i) {
            int cam = int(i) / (spec.n_times - 1);
            int t = int(i) % (spec.n_times - 1);
            const RenderCache& rc = caches[std::size_t(cam) * spec.n_times + t];
            const int W = spec.resolution, H = spec.resolution;
            FlowField fl(H, W);
            Scene next = detail::scene_at_time(scene, spec, res.times[t + 1]);
            RasterConfig cfg;
            // Per-Gaussian projected displacements, computed once.
            std::vector<Vec2> delta(scene.gaussians.size());
            std::vector<bool> have(scene.gaussians.size(), false);
            for (std::size_t g = 0; g < scene.gaussians.size(); ++g) {
                auto now = project(rc.scene.gaussians[g], scene.cameras[cam], cfg);
                auto nxt = project(next.gaussians[g], scene.cameras[cam], cfg);
                if (now && nxt) {
                    delta[g] = {nxt->mean2d.x - now->mean2d.x, nxt->mean2d.y - now->mean2d.y};
                    have[g] = true;
                }
            }
            // Alpha-weighted blend of contributor motions. The constant
            // background is excluded on purpose: a soft splat over constant
            // background advects rigidly, tails included, so diluting tail
            // flow toward zero would only manufacture edge error.
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    std::size_t pix = std::size_t(y) * W + x;
                    double num_u = 0, num_v = 0, wsum = 0;
                    double T = 1.0;
                    for (std::uint32_t k = rc.contrib_offsets[pix]; k < rc.contrib_offsets[pix + 1];
                         ++k) {
                        detail::PixelContribution pc;
                        if (!detail::eval_contribution(rc, rc.splats[rc.contrib_ids[k]], x, y, pc))
                            continue;
                        int g = rc.splats[rc.contrib_ids[k]].gaussian_index;
                        double wgt = T * pc.alpha;
                        if (have[g]) {
                            num_u += wgt * delta[g].x;
                            num_v += wgt * delta[g].y;
                            wsum += wgt;
                        }
                        T *= 1.0 - pc.alpha;
                    }
                    if (wsum > 0) {
                        fl.u[pix] = float(num_u / wsum);
                        fl.v[pix] = float(num_v / wsum);
                    }
                }
            res.flows[i] = std::move(fl);
        });
    }
    return res;
}

// Seeded painterly style pattern: layered rotated stripes and soft blobs.
inline Image synth_style_image(int resolution, std::uint64_t seed) {
    Rng rng(seed, 37);
    struct Stripe { double nx, ny, freq, phase, amp; int ch; };
    std::vector<Stripe> stripes;
    for (int k = 0; k < 9; ++k) {
        double a = rng.uniform(0, 3.14159265358979323846);
        stripes.push_back({std::cos(a), std::sin(a), rng.uniform(2, 7), rng.uniform(0, 6.28),
                           rng.uniform(0.15, 0.4), int(rng.below(3))});
    }
    struct Blob { double cx, cy, r; double col[3]; };
    std::vector<Blob> blobs;
    for (int k = 0; k < 6; ++k) {
        Blob b{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.25), {0, 0, 0}};
        for (double& c : b.col) c = rng.uniform(0, 1);
        blobs.push_back(b);
    }
    double base[3] = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    Image img(resolution, resolution, 3);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            double u = double(x) / resolution, v = double(y) / resolution;
            double px[3] = {base[0], base[1], base[2]};
            for (const Stripe& s : stripes)
                px[s.ch] += s.amp * std::sin(2 * 3.14159265358979323846 * s.freq *
                                                 (s.nx * u + s.ny * v) + s.phase);
            for (const Blob& b : blobs) {
                double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
                double wgt = std::exp(-d2 / (2 * b.r * b.r));
                for (int ch = 0; ch < 3; ++ch) px[ch] = (1 - 0.6 * wgt) * px[ch] + 0.6 * wgt * b.col[ch];
            }
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = float(std::clamp(px[ch], 0.0, 1.0));
        }
    return img;
}

// Writes the run-directory layout the metrics bench consumes.
inline void write_synth_run(const SynthResult& res, const SynthSpec& spec, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/originals");
    fs::create_directories(dir + "/flows");
    char name[32];
    for (int c = 0; c < spec.n_cameras; ++c) {
        std::snprintf(name, sizeof name, "cam%02d", c);
        std::string camdir = dir + "/originals/" + name;
        fs::create_directories(camdir);
        std::string flowdir = dir + "/flows/" + name;
        fs::create_directories(flowdir);
        for (int t = 0; t < spec.n_times; ++t) {
            char fn[32];
            std::snprintf(fn, sizeof fn, "%04d", t);
            save_frame(res.frames[std::size_t(c) * spec.n_times + t], camdir + "/" + fn);
            if (t + 1 < spec.n_times)
                save_flo(res.flows[std::size_t(c) * (spec.n_times - 1) + t],
                         flowdir + "/" + fn + ".flo");
        }
    }
    save_cameras_txt(res.scene.cameras, dir + "/cameras.txt");
    save_scene(res.scene, dir + "/scene_gt.s4ds");
}

// ---------------------------------------------------------------- loader

// Loads a dataset laid out Neu3D-style: per-camera frame folders cam00,
// cam01, ... plus a plain-text cameras.txt. Times normalize to [0,1].
struct LoadedDataset {
    std::vector<Camera> cameras;
    Dataset samples;
    int n_times = 0;
};

inline LoadedDataset load_neu3d_style(const std::string& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), "loader: not a directory: " + dir);
    require(fs::exists(dir + "/cameras.txt"), "loader: missing cameras.txt in " + dir);

    LoadedDataset out;
    out.cameras = load_cameras_txt(dir + "/cameras.txt");
    require(!out.cameras.empty(), "loader: cameras.txt is empty in " + dir);

    std::vector<std::string> camdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && e.path().filename().string().rfind("cam", 0) == 0)
            camdirs.push_back(e.path().filename().string());
    std::sort(camdirs.begin(), camdirs.end());
    require(camdirs.size() == out.cameras.size(),
            "loader: camera folder count (" + std::to_string(camdirs.size()) +
                ") does not match cameras.txt (" + std::to_string(out.cameras.size()) + ")");

    int expected = -1;
    for (std::size_t c = 0; c < camdirs.size(); ++c) {
        std::vector<std::string> stems;
        for (const auto& e : fs::directory_iterator(dir + "/" + camdirs[c])) {
            std::string ext = e.path().extension().string();
            if (ext == ".imgf32") stems.push_back(e.path().stem().string());
        }
        if (stems.empty()) {
            // Fall back to PNG-only folders.
            for (const auto& e : fs::directory_iterator(dir + "/" + camdirs[c]))
                if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
        }
        std::sort(stems.begin(), stems.end());
        require(!stems.empty(), "loader: no frames in " + camdirs[c]);
        if (expected < 0) expected = int(stems.size());
        require(int(stems.size()) == expected,
                "loader: camera " + camdirs[c] + " has " + std::to_string(stems.size()) +
                    " frames, expected " + std::to_string(expected));
        for (int t = 0; t < expected; ++t) {
            std::string base = dir + "/" + camdirs[c] + "/" + stems[t];
            TrainSample s;
            s.cam_index = int(c);
            s.time = expected > 1 ? double(t) / double(expected - 1) : 0.0;
            s.image = fs::exists(base + ".imgf32") ? load_imgf32(base + ".imgf32")
                                                   : load_png(base + ".png");
            require(s.image.c == 3, "loader: expected RGB frames in " + camdirs[c]);
            out.samples.push_back(std::move(s));
        }
    }
    out.n_times = expected;
    return out;
}

} // namespace s4d
