// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "s4d/camera.hpp"
#include "s4d/core.hpp"
#include "s4d/image.hpp"
#include "s4d/project.hpp"
#include "s4d/scene.hpp"

namespace s4d {

constexpr double kShC1 = 0.48860251190291987;

struct RenderOutput {
    Image image; // H x W x 3
    Image alpha; // H x W x 1
    // Unrounded pixel values, filled in exact mode only. Finite-difference
    // oracles read these; the f32 cast above would otherwise swamp small
    // gradients with quantization noise.
    std::vector<double> image_f64;
};

// Per-Gaussian state evaluated once per render.
struct PreparedGaussian {
    DeformedAttribs att;
    double color[3] = {0, 0, 0}; // view-evaluated base color
    Vec3 view_dir;               // unit, camera center -> mu
    double view_dist = 1;
    double opacity_logit = 0;
    // Whitening matrix A = S^-1 R^T and camera-center offset, for p_t.
    Mat3 A;
    Vec3 og; // A * (cam_center - mu)
};

// Everything composite() retains so composite_backward() can replay the
// exact forward contributions.
struct RenderCache {
    Scene scene; // value copy; desk-scale scenes are small
    Camera cam;
    double t = 0;
    bool use_deform = true;
    RasterConfig cfg;
    std::vector<PreparedGaussian> prepared;
    std::vector<Splat2D> splats; // sorted front to back
    std::vector<std::uint32_t> contrib_offsets; // H*W + 1
    std::vector<std::uint32_t> contrib_ids;     // indices into splats
};

struct SceneGrads {
    std::vector<double> mu;      // 3 per gaussian
    std::vector<double> rot;     // 4 per gaussian
    std::vector<double> scale;   // 3 per gaussian
    std::vector<double> opacity; // 1 per gaussian
    std::vector<double> color0;  // 3 per gaussian
    std::vector<double> color1;  // 9 per gaussian (sh1 scenes)
    std::vector<double> mlp;     // TinyMlpParams::kCount per gaussian (style scenes)
    std::vector<double> deform;  // field parameters

    void init(const Scene& s) {
        std::size_t n = s.gaussians.size();
        mu.assign(3 * n, 0.0);
        rot.assign(4 * n, 0.0);
        scale.assign(3 * n, 0.0);
        opacity.assign(n, 0.0);
        color0.assign(3 * n, 0.0);
        color1.assign(s.has_sh1 ? 9 * n : 0, 0.0);
        mlp.assign(s.has_style() ? std::size_t(TinyMlpParams::kCount) * n : 0, 0.0);
        deform.assign(s.deformation.params.size(), 0.0);
    }
    void accumulate(const SceneGrads& o, double w = 1.0) {
        auto add = [w](std::vector<double>& a, const std::vector<double>& b) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += w * b[i];
        };
        add(mu, o.mu); add(rot, o.rot); add(scale, o.scale); add(opacity, o.opacity);
        add(color0, o.color0); add(color1, o.color1); add(mlp, o.mlp); add(deform, o.deform);
    }
};

namespace detail {

inline void eval_base_color(const Scene& scene, std::size_t i, PreparedGaussian& pg) {
    const Gaussian& g = scene.gaussians[i];
    for (int ch = 0; ch < 3; ++ch) pg.color[ch] = g.color0[ch];
    if (scene.has_sh1) {
        double b0 = -kShC1 * pg.view_dir.y;
        double b1 = kShC1 * pg.view_dir.z;
        double b2 = -kShC1 * pg.view_dir.x;
        for (int ch = 0; ch < 3; ++ch)
            pg.color[ch] += b0 * g.color1[ch] + b1 * g.color1[3 + ch] + b2 * g.color1[6 + ch];
    }
}

} // namespace detail

// Deforms, projects, and sorts. `use_deform=false` renders the canonical
// (static) scene, used by the coarse phase of geometry training.
inline RenderCache prepare(const Scene& scene, const Camera& cam, double t,
                           const RasterConfig& cfg = {}, bool use_deform = true) {
    RenderCache rc;
    rc.scene = scene;
    rc.cam = cam;
    rc.t = t;
    rc.cfg = cfg;
    const DeformationField* field = nullptr;
    if (use_deform && !scene.deformation.params.empty() && !scene.deformation.is_zero())
        field = &rc.scene.deformation;
    rc.use_deform = field != nullptr;

    Vec3 center = cam.center();
    std::size_t n = scene.gaussians.size();
    rc.prepared.resize(n);
    parallel_for(n, [&](std::size_t i) {
        PreparedGaussian& pg = rc.prepared[i];
        pg.att = deform_attribs(rc.scene.gaussians[i], field, t, i);
        Vec3 off = pg.att.mu - center;
        pg.view_dist = std::max(norm(off), 1e-9);
        pg.view_dir = off * (1.0 / pg.view_dist);
        detail::eval_base_color(rc.scene, i, pg);
        pg.opacity_logit = logit(double(rc.scene.gaussians[i].opacity));
        Mat3 R = quat_to_mat(pg.att.rot[0], pg.att.rot[1], pg.att.rot[2], pg.att.rot[3]);
        for (int r = 0; r < 3; ++r) {
            double s = r == 0 ? pg.att.scale.x : (r == 1 ? pg.att.scale.y : pg.att.scale.z);
            for (int c2 = 0; c2 < 3; ++c2) pg.A(r, c2) = R(c2, r) / s;
        }
        pg.og = pg.A * (center - pg.att.mu);
    });

    rc.splats.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto s = project_attribs(rc.prepared[i].att, int(i), cam, cfg);
        if (s) rc.splats.push_back(*s);
    }
    std::stable_sort(rc.splats.begin(), rc.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.view_depth != b.view_depth) return a.view_depth < b.view_depth;
        return a.gaussian_index < b.gaussian_index;
    });
    return rc;
}

namespace detail {

struct PixelContribution {
    std::uint32_t splat = 0;
    double gauss = 0, sig = 0, alpha = 0;
    double color[3] = {0, 0, 0};
    double depth_n = 0; // normalized p_t (style scenes)
    double pt_raw = 0;  // unclamped ray parameter
    MlpOut mlp;
};

// Evaluates one splat at one pixel. Returns false when the production-mode
// sigma cutoff rejects it.
inline bool eval_contribution(const RenderCache& rc, const Splat2D& sp, double px, double py,
                              PixelContribution& out) {
    double dx = px - sp.mean2d.x;
    double dy = py - sp.mean2d.y;
    double q = 0.5 * (sp.conic[0] * dx * dx + 2 * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy);
    if (!rc.cfg.exact && q > 0.5 * rc.cfg.sigma_cutoff * rc.cfg.sigma_cutoff) return false;
    const PreparedGaussian& pg = rc.prepared[sp.gaussian_index];
    out.splat = 0;
    out.gauss = std::exp(-q);
    double dlogit = 0;
    for (int ch = 0; ch < 3; ++ch) out.color[ch] = pg.color[ch];
    if (rc.scene.has_style()) {
        Vec3 dir = rc.cam.pixel_ray(px, py);
        Vec3 dg = pg.A * dir;
        double denom = dot(dg, dg);
        require_numeric(denom > 1e-24, "degenerate whitened ray direction");
        out.pt_raw = -dot(pg.og, dg) / denom;
        double pt = out.pt_raw > 0 ? out.pt_raw : 0.0;
        out.depth_n = pt / double(rc.scene.scene_radius);
        out.mlp = mlp_forward(rc.scene.style_mlps[sp.gaussian_index], rc.t, out.depth_n);
        dlogit = out.mlp.opacity_logit;
        for (int ch = 0; ch < 3; ++ch) out.color[ch] += out.mlp.rgb[ch];
    }
    out.sig = sigmoid(pg.opacity_logit + dlogit);
    out.alpha = out.sig * out.gauss;
    return true;
}

} // namespace detail

// Front-to-back alpha compositing of the prepared splats. Retains per-pixel
// contributor lists in the cache for the backward pass.
inline RenderOutput composite(RenderCache& rc) {
    const int W = rc.cam.width, H = rc.cam.height;
    require(W > 0 && H > 0, "composite: camera has empty image plane");
    for (std::size_t i = 1; i < rc.splats.size(); ++i) {
        const Splat2D& a = rc.splats[i - 1];
        const Splat2D& b = rc.splats[i];
        require(a.view_depth < b.view_depth ||
                    (a.view_depth == b.view_depth && a.gaussian_index < b.gaussian_index),
                "composite: splats are not sorted front to back");
    }

    RenderOutput out;
    out.image = Image(H, W, 3);
    out.alpha = Image(H, W, 1);
    if (rc.cfg.exact) out.image_f64.assign(std::size_t(H) * W * 3, 0.0);

    const int tile = std::max(rc.cfg.tile, 1);
    const int tiles_x = (W + tile - 1) / tile;
    const int tiles_y = (H + tile - 1) / tile;
    const std::size_t n_tiles = std::size_t(tiles_x) * tiles_y;

    // Per-splat tile ranges, filled in sorted order so tile lists stay sorted.
    std::vector<std::vector<std::uint32_t>> tile_splats(n_tiles);
    for (std::uint32_t si = 0; si < rc.splats.size(); ++si) {
        const Splat2D& sp = rc.splats[si];
        int tx0 = 0, tx1 = tiles_x - 1, ty0 = 0, ty1 = tiles_y - 1;
        if (!rc.cfg.exact) {
            tx0 = std::clamp(int(std::floor((sp.mean2d.x - sp.radius) / tile)), 0, tiles_x - 1);
            tx1 = std::clamp(int(std::floor((sp.mean2d.x + sp.radius) / tile)), 0, tiles_x - 1);
            ty0 = std::clamp(int(std::floor((sp.mean2d.y - sp.radius) / tile)), 0, tiles_y - 1);
            ty1 = std::clamp(int(std::floor((sp.mean2d.y + sp.radius) / tile)), 0, tiles_y - 1);
        }
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                tile_splats[std::size_t(ty) * tiles_x + tx].push_back(si);
    }

    std::vector<std::vector<std::uint32_t>> tile_contribs(n_tiles);
    std::vector<std::vector<std::uint32_t>> tile_counts(n_tiles);

    parallel_for(n_tiles, [&](std::size_t ti) {
        int tx = int(ti % tiles_x), ty = int(ti / tiles_x);
        int x0 = tx * tile, x1 = std::min(W, x0 + tile);
        int y0 = ty * tile, y1 = std::min(H, y0 + tile);
        auto& ids = tile_contribs[ti];
        auto& counts = tile_counts[ti];
        counts.reserve(std::size_t(x1 - x0) * (y1 - y0));
        const auto& list = tile_splats[ti];
        detail::PixelContribution pc;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                double T = 1.0, C[3] = {0, 0, 0}, A = 0.0;
                std::uint32_t cnt = 0;
                for (std::uint32_t si : list) {
                    if (!detail::eval_contribution(rc, rc.splats[si], x, y, pc)) continue;
                    double w = T * pc.alpha;
                    for (int ch = 0; ch < 3; ++ch) C[ch] += w * pc.color[ch];
                    A += w;
                    T *= 1.0 - pc.alpha;
                    ids.push_back(si);
                    ++cnt;
                    if (!rc.cfg.exact && T < rc.cfg.early_exit_T) break;
                }
                counts.push_back(cnt);
                for (int ch = 0; ch < 3; ++ch) {
                    double val = C[ch] + T * double(rc.scene.background[ch]);
                    out.image.at(ch, y, x) = float(val);
                    if (rc.cfg.exact) out.image_f64[(std::size_t(ch) * H + y) * W + x] = val;
                }
                out.alpha.at(0, y, x) = float(A);
            }
    });

    // Flatten contributor lists in pixel order (deterministic for any thread count).
    rc.contrib_offsets.assign(std::size_t(H) * W + 1, 0);
    std::size_t total = 0;
    for (std::size_t ti = 0; ti < n_tiles; ++ti) total += tile_contribs[ti].size();
    rc.contrib_ids.resize(total);
    // First pass: counts per pixel.
    for (std::size_t ti = 0; ti < n_tiles; ++ti) {
        int tx = int(ti % tiles_x), ty = int(ti / tiles_x);
        int x0 = tx * tile, x1 = std::min(W, x0 + tile);
        int y0 = ty * tile, y1 = std::min(H, y0 + tile);
        std::size_t k = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                rc.contrib_offsets[std::size_t(y) * W + x + 1] = tile_counts[ti][k++];
    }
    for (std::size_t i = 1; i < rc.contrib_offsets.size(); ++i)
        rc.contrib_offsets[i] += rc.contrib_offsets[i - 1];
    // Second pass: scatter ids.
    for (std::size_t ti = 0; ti < n_tiles; ++ti) {
        int tx = int(ti % tiles_x), ty = int(ti / tiles_x);
        int x0 = tx * tile, x1 = std::min(W, x0 + tile);
        int y0 = ty * tile, y1 = std::min(H, y0 + tile);
        std::size_t k = 0, src = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                std::uint32_t cnt = tile_counts[ti][k++];
                std::size_t dst = rc.contrib_offsets[std::size_t(y) * W + x];
                for (std::uint32_t j = 0; j < cnt; ++j) rc.contrib_ids[dst + j] = tile_contribs[ti][src++];
            }
    }
    return out;
}

inline RenderOutput render(const Scene& scene, const Camera& cam, double t,
                           const RasterConfig& cfg = {}, bool use_deform = true,
                           RenderCache* cache_out = nullptr) {
    RenderCache rc = prepare(scene, cam, t, cfg, use_deform);
    RenderOutput out = composite(rc);
    if (cache_out) *cache_out = std::move(rc);
    return out;
}

// Exact adjoint of composite(). `dimage` is dL/d(image), optionally
// `dalpha` dL/d(alpha map). Gradients are accumulated per tile and merged
// in tile order, so results are byte-identical for any thread count.
inline SceneGrads composite_backward(const RenderCache& rc, const Image& dimage,
                                     const Image* dalpha = nullptr) {
    require(!rc.contrib_offsets.empty(), "composite_backward: no retained forward state");
    const int W = rc.cam.width, H = rc.cam.height;
    require(dimage.h == H && dimage.w == W && dimage.c == 3,
            "composite_backward: upstream gradient shape mismatch");

    const Scene& scene = rc.scene;
    const bool has_style = scene.has_style();
    const bool has_sh1 = scene.has_sh1;
    const std::size_t n_splats = rc.splats.size();

    // Per-splat accumulator layout (doubles):
    // [0,1]   d mean2d
    // [2,4]   d cov2d (a, b, c)
    // [5,7]   d color_eff
    // [8]     d opacity-logit sum
    // [9,11]  sum of d og (p_t chain)
    // [12,20] d A (whitening matrix, row-major)
    // [21..]  d mlp params (kCount)
    constexpr int kBase = 21;
    const int stride = kBase + (has_style ? TinyMlpParams::kCount : 0);

    const int tile = std::max(rc.cfg.tile, 1);
    const int tiles_x = (W + tile - 1) / tile;
    const int tiles_y = (H + tile - 1) / tile;
    const std::size_t n_tiles = std::size_t(tiles_x) * tiles_y;

    std::vector<std::vector<double>> tile_acc(n_tiles);

    parallel_for(n_tiles, [&](std::size_t ti) {
        auto& acc = tile_acc[ti];
        acc.assign(n_splats * std::size_t(stride), 0.0);
        int tx = int(ti % tiles_x), ty = int(ti / tiles_x);
        int x0 = tx * tile, x1 = std::min(W, x0 + tile);
        int y0 = ty * tile, y1 = std::min(H, y0 + tile);

        std::vector<detail::PixelContribution> list;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                std::size_t pix = std::size_t(y) * W + x;
                std::uint32_t begin = rc.contrib_offsets[pix], end = rc.contrib_offsets[pix + 1];
                if (begin == end && !dalpha) continue;
                double up[3] = {dimage.at(0, y, x), dimage.at(1, y, x), dimage.at(2, y, x)};
                double upA = dalpha ? double(dalpha->at(0, y, x)) : 0.0;
                if (up[0] == 0 && up[1] == 0 && up[2] == 0 && upA == 0) continue;

                list.clear();
                for (std::uint32_t k = begin; k < end; ++k) {
                    detail::PixelContribution pc;
                    bool ok = detail::eval_contribution(rc, rc.splats[rc.contrib_ids[k]], x, y, pc);
                    require_numeric(ok, "composite_backward: contribution replay diverged");
                    pc.splat = rc.contrib_ids[k];
                    list.push_back(pc);
                }

                // Rear composites: R_k = blend of everything behind k (+background),
                // S_k = transmittance of everything behind k.
                std::size_t m = list.size();
                std::vector<double> rearR(3 * m), rearS(m);
                double R[3] = {double(scene.background[0]), double(scene.background[1]),
                               double(scene.background[2])};
                double S = 1.0;
                for (std::size_t k = m; k-- > 0;) {
                    rearR[3 * k] = R[0]; rearR[3 * k + 1] = R[1]; rearR[3 * k + 2] = R[2];
                    rearS[k] = S;
                    const auto& pc = list[k];
                    for (int ch = 0; ch < 3; ++ch)
                        R[ch] = pc.alpha * pc.color[ch] + (1.0 - pc.alpha) * R[ch];
                    S *= 1.0 - pc.alpha;
                }

                double T = 1.0;
                for (std::size_t k = 0; k < m; ++k) {
                    const auto& pc = list[k];
                    const Splat2D& sp = rc.splats[pc.splat];
                    const PreparedGaussian& pg = rc.prepared[sp.gaussian_index];
                    double* a = acc.data() + std::size_t(pc.splat) * stride;

                    double w = T * pc.alpha;
                    double dceff[3], dalpha_k = 0;
                    for (int ch = 0; ch < 3; ++ch) {
                        dceff[ch] = up[ch] * w;
                        dalpha_k += up[ch] * T * (pc.color[ch] - rearR[3 * k + ch]);
                    }
                    dalpha_k += upA * T * rearS[k];

                    for (int ch = 0; ch < 3; ++ch) a[5 + ch] += dceff[ch];

                    double dsig = dalpha_k * pc.gauss;
                    double dgauss = dalpha_k * pc.sig;
                    double dlogit_arg = dsig * pc.sig * (1.0 - pc.sig);
                    a[8] += dlogit_arg;

                    // q chain.
                    double dq = -pc.gauss * dgauss;
                    double dx = x - sp.mean2d.x, dy = y - sp.mean2d.y;
                    double mx = sp.conic[0] * dx + sp.conic[1] * dy;
                    double my = sp.conic[1] * dx + sp.conic[2] * dy;
                    a[0] += -dq * mx;
                    a[1] += -dq * my;
                    a[2] += dq * (-0.5 * mx * mx);
                    a[3] += dq * (-mx * my);
                    a[4] += dq * (-0.5 * my * my);

                    if (has_style) {
                        double up_mlp[4] = {dceff[0], dceff[1], dceff[2], dlogit_arg};
                        double din[2] = {0, 0};
                        mlp_backward(scene.style_mlps[sp.gaussian_index], rc.t, pc.depth_n,
                                     pc.mlp, up_mlp, a + kBase, din);
                        if (pc.pt_raw > 0) {
                            double dpt = din[1] / double(scene.scene_radius);
                            Vec3 dir = rc.cam.pixel_ray(double(x), double(y));
                            Vec3 dg = pg.A * dir;
                            double denom = dot(dg, dg);
                            Vec3 d_og = dg * (-dpt / denom);
                            Vec3 d_dg = (pg.og + dg * (2.0 * pc.pt_raw)) * (-dpt / denom);
                            a[9] += d_og.x; a[10] += d_og.y; a[11] += d_og.z;
                            // dA += d_og * (center-mu)^T + d_dg * dir^T; og = A*(center-mu)
                            // so (center-mu) = A^-1 og; cheaper to use stored og via
                            // v = center - mu which we recover from pg: A v = og.
                            // Accumulate with v reconstructed exactly below.
                            Vec3 v = rc.cam.center() - pg.att.mu;
                            const double dogv[3] = {d_og.x, d_og.y, d_og.z};
                            const double ddgv[3] = {d_dg.x, d_dg.y, d_dg.z};
                            const double vv[3] = {v.x, v.y, v.z};
                            const double dirv[3] = {dir.x, dir.y, dir.z};
                            for (int r = 0; r < 3; ++r)
                                for (int c2 = 0; c2 < 3; ++c2)
                                    a[12 + r * 3 + c2] += dogv[r] * vv[c2] + ddgv[r] * dirv[c2];
                        }
                    }
                    T *= 1.0 - pc.alpha;
                }
            }
    });

    // Merge per-tile accumulators in tile order.
    std::vector<double> acc(n_splats * std::size_t(stride), 0.0);
    for (std::size_t ti = 0; ti < n_tiles; ++ti) {
        if (tile_acc[ti].empty()) continue;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += tile_acc[ti][i];
    }

    SceneGrads grads;
    grads.init(scene);
    Vec3 center = rc.cam.center();
    Mat3 Wm = rc.cam.rot();

    for (std::size_t si = 0; si < n_splats; ++si) {
        const double* a = acc.data() + si * stride;
        const Splat2D& sp = rc.splats[si];
        int gi = sp.gaussian_index;
        const PreparedGaussian& pg = rc.prepared[gi];
        const Gaussian& g = scene.gaussians[gi];

        // Opacity (chain through logit of the stored value).
        double o = double(g.opacity);
        grads.opacity[gi] += a[8] / (o * (1.0 - o));

        // Color chain.
        double dceff[3] = {a[5], a[6], a[7]};
        Vec3 ddir{0, 0, 0};
        for (int ch = 0; ch < 3; ++ch) grads.color0[3 * gi + ch] += dceff[ch];
        if (has_sh1) {
            double b0 = -kShC1 * pg.view_dir.y;
            double b1 = kShC1 * pg.view_dir.z;
            double b2 = -kShC1 * pg.view_dir.x;
            for (int ch = 0; ch < 3; ++ch) {
                grads.color1[9 * gi + ch] += dceff[ch] * b0;
                grads.color1[9 * gi + 3 + ch] += dceff[ch] * b1;
                grads.color1[9 * gi + 6 + ch] += dceff[ch] * b2;
                ddir.y += dceff[ch] * double(g.color1[ch]) * -kShC1;
                ddir.z += dceff[ch] * double(g.color1[3 + ch]) * kShC1;
                ddir.x += dceff[ch] * double(g.color1[6 + ch]) * -kShC1;
            }
        }

        if (has_style) {
            for (int k = 0; k < TinyMlpParams::kCount; ++k)
                grads.mlp[std::size_t(TinyMlpParams::kCount) * gi + k] += a[kBase + k];
        }

        // Deformed-attribute gradients assembled below, then pushed through
        // the deformation field.
        double dmu[3] = {0, 0, 0}, drot[4] = {0, 0, 0, 0}, dscale[3] = {0, 0, 0};

        // p_t chain: mu' via og = A (center - mu'), and R/scale via A.
        Mat3 dA;
        for (int i = 0; i < 9; ++i) dA.m[i] = a[12 + i];
        Vec3 sum_dog{a[9], a[10], a[11]};
        Vec3 dmu_pt = pg.A.transposed_mul(sum_dog) * -1.0;
        dmu[0] += dmu_pt.x; dmu[1] += dmu_pt.y; dmu[2] += dmu_pt.z;

        Mat3 R = quat_to_mat(pg.att.rot[0], pg.att.rot[1], pg.att.rot[2], pg.att.rot[3]);
        Mat3 dR_total{}; // accumulated dL/dR
        double sc[3] = {pg.att.scale.x, pg.att.scale.y, pg.att.scale.z};
        for (int r = 0; r < 3; ++r)
            for (int c2 = 0; c2 < 3; ++c2) {
                // A(r,c) = R(c,r)/s_r
                dR_total(c2, r) += dA(r, c2) / sc[r];
                dscale[r] += dA(r, c2) * (-pg.A(r, c2) / sc[r]);
            }

        // Projection chain.
        Vec3 p = Wm * pg.att.mu + rc.cam.trans();
        double inv_z = 1.0 / p.z;
        Vec3 j0{rc.cam.fx * inv_z, 0.0, -rc.cam.fx * p.x * inv_z * inv_z};
        Vec3 j1{0.0, rc.cam.fy * inv_z, -rc.cam.fy * p.y * inv_z * inv_z};
        Mat3 M = Wm * R;
        for (int r = 0; r < 3; ++r) {
            M(r, 0) *= sc[0];
            M(r, 1) *= sc[1];
            M(r, 2) *= sc[2];
        }
        Mat3 V = M * M.transposed();

        double da = a[2], db = a[3], dc = a[4];
        // dV (full, unsymmetrized adjoint of a = j0 V j0^T etc.)
        Mat3 dV{};
        const Vec3 j[2] = {j0, j1};
        auto outer_add = [&](const Vec3& u, const Vec3& v, double wgt) {
            const double uu[3] = {u.x, u.y, u.z}, vv[3] = {v.x, v.y, v.z};
            for (int r = 0; r < 3; ++r)
                for (int c2 = 0; c2 < 3; ++c2) dV(r, c2) += wgt * uu[r] * vv[c2];
        };
        outer_add(j[0], j[0], da);
        outer_add(j[0], j[1], db);
        outer_add(j[1], j[1], dc);
        // dM = (dV + dV^T) M
        Mat3 dVs{};
        for (int r = 0; r < 3; ++r)
            for (int c2 = 0; c2 < 3; ++c2) dVs(r, c2) = dV(r, c2) + dV(c2, r);
        Mat3 dM2 = dVs * M;

        // dJ rows.
        Vec3 Vj0 = V * j0, Vj1 = V * j1;
        Vec3 dj0 = Vj0 * (2 * da) + Vj1 * db;
        Vec3 dj1 = Vj0 * db + Vj1 * (2 * dc);

        // d p from mean2d and from J.
        Vec3 dp = j0 * a[0] + j1 * a[1];
        dp.x += dj0.z * (-rc.cam.fx * inv_z * inv_z);
        dp.y += dj1.z * (-rc.cam.fy * inv_z * inv_z);
        dp.z += dj0.x * (-rc.cam.fx * inv_z * inv_z) + dj0.z * (2 * rc.cam.fx * p.x * inv_z * inv_z * inv_z);
        dp.z += dj1.y * (-rc.cam.fy * inv_z * inv_z) + dj1.z * (2 * rc.cam.fy * p.y * inv_z * inv_z * inv_z);

        Vec3 dmu_proj = Wm.transposed_mul(dp);
        dmu[0] += dmu_proj.x; dmu[1] += dmu_proj.y; dmu[2] += dmu_proj.z;

        // dM2 -> dR, dscale (M = W R diag(s)).
        Mat3 WR = Wm * R;
        for (int r = 0; r < 3; ++r)
            for (int c2 = 0; c2 < 3; ++c2) {
                dscale[c2] += dM2(r, c2) * WR(r, c2);
            }
        Mat3 dWR{};
        for (int r = 0; r < 3; ++r)
            for (int c2 = 0; c2 < 3; ++c2) dWR(r, c2) = dM2(r, c2) * sc[c2];
        Mat3 dR_proj = Wm.transposed() * dWR;
        for (int i = 0; i < 9; ++i) dR_total.m[i] += dR_proj.m[i];

        // View-direction chain (sh1 only): dir = (mu - center)/dist.
        if (has_sh1 && (ddir.x != 0 || ddir.y != 0 || ddir.z != 0)) {
            double inv_d = 1.0 / pg.view_dist;
            double proj = dot(ddir, pg.view_dir);
            Vec3 dmu_dir = (ddir - pg.view_dir * proj) * inv_d;
            dmu[0] += dmu_dir.x; dmu[1] += dmu_dir.y; dmu[2] += dmu_dir.z;
        }

        // Rotation matrix -> quaternion.
        quat_to_mat_backward(pg.att.rot[0], pg.att.rot[1], pg.att.rot[2], pg.att.rot[3],
                             dR_total, drot);

        // Push through the deformation field to canonical parameters.
        deform_backward(g, rc.use_deform ? &rc.scene.deformation : nullptr, rc.t, pg.att,
                        dmu, drot, dscale,
                        grads.mu.data() + 3 * gi, grads.rot.data() + 4 * gi,
                        grads.scale.data() + 3 * gi,
                        grads.deform.empty() ? nullptr : grads.deform.data());
    }
    return grads;
}

// ---------------------------------------------------------------- trajectories

// Helical poses around `center`: azimuth sweeps 2*pi*turns from first to
// last frame while height moves linearly z0 -> z1. Cameras look at center.
inline std::vector<Camera> helix_poses(const Vec3& center, double radius, double turns, int n,
                                       double z0, double z1, float fx, float fy, float cx, float cy,
                                       int w, int h) {
    require(n >= 1, "helix_poses: need at least one frame");
    std::vector<Camera> cams;
    cams.reserve(n);
    for (int i = 0; i < n; ++i) {
        double u = n > 1 ? double(i) / double(n - 1) : 0.0;
        double az = 2.0 * 3.14159265358979323846 * turns * u;
        Vec3 eye = center + Vec3{radius * std::cos(az), radius * std::sin(az), z0 + (z1 - z0) * u};
        cams.push_back(look_at(eye, center, fx, fy, cx, cy, w, h));
    }
    return cams;
}

inline std::vector<RenderOutput> render_trajectory(const Scene& scene,
                                                   const std::vector<Camera>& cams,
                                                   const std::vector<double>& times,
                                                   const RasterConfig& cfg = {}) {
    require(!cams.empty() && cams.size() == times.size(),
            "render_trajectory: camera and time lists must be equal and non-empty");
    std::vector<RenderOutput> frames(cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i)
        frames[i] = render(scene, cams[i], times[i], cfg);
    return frames;
}

} // namespace s4d
