// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/image.hpp"

namespace s4d {

// Dense displacement field mapping frame-(t+1) sampling positions toward
// frame t: warped(x) = next(x + flow(x)). Content that moves +d pixels
// between frames yields flow -d under this convention.
struct FlowField {
    int h = 0, w = 0;
    std::vector<float> u, v;

    FlowField() = default;
    FlowField(int h_, int w_) : h(h_), w(w_), u(std::size_t(h_) * w_, 0.f), v(std::size_t(h_) * w_, 0.f) {}
    std::size_t idx(int y, int x) const { return std::size_t(y) * w + x; }
    bool finite() const {
        for (float f : u)
            if (!std::isfinite(f)) return false;
        for (float f : v)
            if (!std::isfinite(f)) return false;
        return true;
    }
};

namespace detail {

inline std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(std::size_t(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double r = img.at(0, y, x);
            double gg = img.c > 1 ? img.at(1, y, x) : r;
            double b = img.c > 2 ? img.at(2, y, x) : r;
            g[std::size_t(y) * img.w + x] = 0.299 * r + 0.587 * gg + 0.114 * b;
        }
    return g;
}

struct GrayLevel {
    int h = 0, w = 0;
    std::vector<double> v;
    double at(int y, int x) const {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return v[std::size_t(y) * w + x];
    }
    double sample(double x, double y) const {
        int x0 = int(std::floor(x)), y0 = int(std::floor(y));
        double fx = x - x0, fy = y - y0;
        double v00 = at(y0, x0), v01 = at(y0, x0 + 1), v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
        return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
    }
};

inline GrayLevel downsample(const GrayLevel& in) {
    GrayLevel out;
    out.h = in.h / 2;
    out.w = in.w / 2;
    out.v.resize(std::size_t(out.h) * out.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.v[std::size_t(y) * out.w + x] =
                0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x) +
                        in.at(2 * y + 1, 2 * x + 1));
    return out;
}

} // namespace detail

// Three-level pyramidal iterative Lucas-Kanade: window 7x7, three warp
// refinements per level. Identical frames produce exactly zero flow.
inline FlowField estimate_flow(const Image& frame_t, const Image& frame_t1) {
    require(frame_t.same_shape(frame_t1), "estimate_flow: frame shapes differ");
    require(frame_t.h >= 32 && frame_t.w >= 32, "estimate_flow: frames must be at least 32px");

    constexpr int kLevels = 3;
    constexpr int kRadius = 3;
    constexpr int kIters = 3;

    std::array<detail::GrayLevel, kLevels> pa, pb;
    pa[0] = {frame_t.h, frame_t.w, detail::to_gray(frame_t)};
    pb[0] = {frame_t1.h, frame_t1.w, detail::to_gray(frame_t1)};
    for (int l = 1; l < kLevels; ++l) {
        pa[l] = detail::downsample(pa[l - 1]);
        pb[l] = detail::downsample(pb[l - 1]);
    }

    std::vector<double> fu, fv;
    for (int l = kLevels - 1; l >= 0; --l) {
        const detail::GrayLevel& A = pa[l];
        const detail::GrayLevel& B = pb[l];
        const std::size_t n = std::size_t(A.h) * A.w;
        std::vector<double> u(n, 0.0), v(n, 0.0);
        if (!fu.empty()) {
            // Upsample the coarser flow (nearest with doubling).
            int ch = pa[l + 1].h, cw = pa[l + 1].w;
            for (int y = 0; y < A.h; ++y)
                for (int x = 0; x < A.w; ++x) {
                    int cy = std::min(y / 2, ch - 1), cx = std::min(x / 2, cw - 1);
                    u[std::size_t(y) * A.w + x] = 2.0 * fu[std::size_t(cy) * cw + cx];
                    v[std::size_t(y) * A.w + x] = 2.0 * fv[std::size_t(cy) * cw + cx];
                }
        }

        // Spatial gradients of frame t at this level.
        std::vector<double> gx(n), gy(n);
        for (int y = 0; y < A.h; ++y)
            for (int x = 0; x < A.w; ++x) {
                gx[std::size_t(y) * A.w + x] = 0.5 * (A.at(y, x + 1) - A.at(y, x - 1));
                gy[std::size_t(y) * A.w + x] = 0.5 * (A.at(y + 1, x) - A.at(y - 1, x));
            }

        for (int it = 0; it < kIters; ++it) {
            std::vector<double> nu(n), nv(n);
            parallel_for(std::size_t(A.h), [&](std::size_t yy) {
                int y = int(yy);
                for (int x = 0; x < A.w; ++x) {
                    std::size_t i = std::size_t(y) * A.w + x;
                    double g11 = 0, g12 = 0, g22 = 0, b1 = 0, b2 = 0;
                    for (int dy = -kRadius; dy <= kRadius; ++dy)
                        for (int dx = -kRadius; dx <= kRadius; ++dx) {
                            int px = std::clamp(x + dx, 0, A.w - 1);
                            int py = std::clamp(y + dy, 0, A.h - 1);
                            std::size_t pi = std::size_t(py) * A.w + px;
                            double wx = gx[pi], wy = gy[pi];
                            double r = A.v[pi] - B.sample(px + u[i], py + v[i]);
                            g11 += wx * wx;
                            g12 += wx * wy;
                            g22 += wy * wy;
                            b1 += wx * r;
                            b2 += wy * r;
                        }
                    double det = g11 * g22 - g12 * g12;
                    double du = 0, dv = 0;
                    if (det > 1e-9) {
                        du = (g22 * b1 - g12 * b2) / det;
                        dv = (g11 * b2 - g12 * b1) / det;
                    }
                    // Clamp per-iteration updates to keep divergent corners bounded.
                    du = std::clamp(du, -double(A.w), double(A.w));
                    dv = std::clamp(dv, -double(A.h), double(A.h));
                    nu[i] = u[i] + du;
                    nv[i] = v[i] + dv;
                }
            });
            u.swap(nu);
            v.swap(nv);
        }
        fu.swap(u);
        fv.swap(v);
    }

    FlowField out(frame_t.h, frame_t.w);
    for (std::size_t i = 0; i < fu.size(); ++i) {
        out.u[i] = float(fu[i]);
        out.v[i] = float(fv[i]);
    }
    return out;
}

// ---------------------------------------------------------------- warp

struct WarpResult {
    Image image;                  // warped frame
    std::vector<std::uint8_t> valid; // per pixel
    std::size_t n_valid = 0;
};

// Bilinear sampling of `next` at x + flow(x); samples outside the frame are
// marked invalid rather than clamped.
inline WarpResult warp(const Image& next, const FlowField& flow) {
    require(next.h == flow.h && next.w == flow.w, "warp: flow shape mismatch");
    WarpResult res;
    res.image = Image(next.h, next.w, next.c);
    res.valid.assign(std::size_t(next.h) * next.w, 0);
    for (int y = 0; y < next.h; ++y)
        for (int x = 0; x < next.w; ++x) {
            std::size_t i = std::size_t(y) * next.w + x;
            double sx = x + double(flow.u[i]);
            double sy = y + double(flow.v[i]);
            if (sx < 0 || sy < 0 || sx > next.w - 1 || sy > next.h - 1) continue;
            res.valid[i] = 1;
            res.n_valid++;
            for (int ch = 0; ch < next.c; ++ch)
                res.image.at(ch, y, x) = float(bilinear(next, ch, sx, sy));
        }
    return res;
}

// Per-pair warp error: mean absolute difference between the warped next
// frame and the current frame over valid pixels, averaged over all
// consecutive pairs. Flows are estimated when not supplied.
inline double warp_loss(const std::vector<Image>& frames, const std::vector<FlowField>* flows = nullptr) {
    require(frames.size() >= 2, "warp_loss: need at least two frames");
    if (flows)
        require(flows->size() == frames.size() - 1, "warp_loss: need one flow per frame pair");
    double total = 0;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
        require(frames[t].same_shape(frames[t + 1]), "warp_loss: frame shapes differ");
        FlowField est;
        const FlowField& f = flows ? (*flows)[t] : (est = estimate_flow(frames[t], frames[t + 1]), est);
        WarpResult wr = warp(frames[t + 1], f);
        require(wr.n_valid > 0, "warp_loss: no valid pixels after warping pair " + std::to_string(t));
        double acc = 0;
        for (int y = 0; y < frames[t].h; ++y)
            for (int x = 0; x < frames[t].w; ++x) {
                std::size_t i = std::size_t(y) * frames[t].w + x;
                if (!wr.valid[i]) continue;
                double px = 0;
                for (int ch = 0; ch < frames[t].c; ++ch)
                    px += std::abs(double(wr.image.at(ch, y, x)) - frames[t].at(ch, y, x));
                acc += px / frames[t].c;
            }
        total += acc / double(wr.n_valid);
    }
    return total / double(frames.size() - 1);
}

// ---------------------------------------------------------------- .flo io

// Middlebury-style container: f32 magic 202021.25 ("PIEH"), i32 width,
// i32 height, interleaved f32 (u, v) row-major.
inline void save_flo(const FlowField& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open for write: " + path);
    float magic = 202021.25f;
    std::int32_t w = f.w, h = f.h;
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) {
            out.write(reinterpret_cast<const char*>(&f.u[f.idx(y, x)]), 4);
            out.write(reinterpret_cast<const char*>(&f.v[f.idx(y, x)]), 4);
        }
    require(out.good(), "write failed: " + path);
}

inline FlowField load_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open: " + path);
    float magic = 0;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    require(in.good() && magic == 202021.25f, "bad .flo magic: " + path);
    require(w > 0 && h > 0 && w < (1 << 20) && h < (1 << 20), "bad .flo dimensions: " + path);
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            in.read(reinterpret_cast<char*>(&f.u[f.idx(y, x)]), 4);
            in.read(reinterpret_cast<char*>(&f.v[f.idx(y, x)]), 4);
        }
    require(in.good(), "truncated .flo: " + path);
    require(f.finite(), "non-finite flow values in " + path);
    return f;
}

} // namespace s4d
