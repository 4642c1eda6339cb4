// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/losses.hpp"
#include "s4d/optim.hpp"
#include "s4d/rasterizer.hpp"
#include "s4d/rng.hpp"
#include "s4d/scene.hpp"

namespace s4d {

struct TrainSample {
    int cam_index = 0;
    double time = 0;
    Image image;
};

using Dataset = std::vector<TrainSample>;

using LogSink = std::function<void(const std::string&)>;

namespace detail {

inline void log_row(const LogSink& sink, const char* stage, int step, double loss, double l1,
                    double lr, double psnr) {
    if (!sink) return;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "{\"stage\":\"%s\",\"step\":%d,\"loss\":%.9g,\"l1\":%.9g,\"lr\":%.9g,\"psnr\":%.9g}",
                  stage, step, loss, l1, lr, psnr);
    sink(buf);
}

// Double-precision master parameters for the trainable scene fields; the
// scene itself stays the f32 source of truth for rendering.
struct ParamStore {
    std::vector<double> mu, rot, log_scale, opacity_logit, color0, color1, mlp, deform;

    static ParamStore from_scene(const Scene& s) {
        ParamStore p;
        std::size_t n = s.gaussians.size();
        p.mu.resize(3 * n);
        p.rot.resize(4 * n);
        p.log_scale.resize(3 * n);
        p.opacity_logit.resize(n);
        p.color0.resize(3 * n);
        if (s.has_sh1) p.color1.resize(9 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const Gaussian& g = s.gaussians[i];
            for (int k = 0; k < 3; ++k) p.mu[3 * i + k] = g.mu[k];
            for (int k = 0; k < 4; ++k) p.rot[4 * i + k] = g.rot[k];
            for (int k = 0; k < 3; ++k) p.log_scale[3 * i + k] = std::log(double(g.scale[k]));
            p.opacity_logit[i] = logit(double(g.opacity));
            for (int k = 0; k < 3; ++k) p.color0[3 * i + k] = g.color0[k];
            if (s.has_sh1)
                for (int k = 0; k < 9; ++k) p.color1[9 * i + k] = g.color1[k];
        }
        if (s.has_style()) {
            p.mlp.resize(std::size_t(TinyMlpParams::kCount) * n);
            float flat[TinyMlpParams::kCount];
            for (std::size_t i = 0; i < n; ++i) {
                s.style_mlps[i].flatten(flat);
                for (int k = 0; k < TinyMlpParams::kCount; ++k)
                    p.mlp[std::size_t(TinyMlpParams::kCount) * i + k] = flat[k];
            }
        }
        p.deform.assign(s.deformation.params.begin(), s.deformation.params.end());
        return p;
    }

    // Writes the selected groups back into the scene (f32). Frozen groups
    // are skipped entirely so their stored bits never change.
    void write_geometry(Scene& s) const {
        std::size_t n = s.gaussians.size();
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian& g = s.gaussians[i];
            for (int k = 0; k < 3; ++k) g.mu[k] = float(mu[3 * i + k]);
            double q[4], n2 = 0;
            for (int k = 0; k < 4; ++k) {
                q[k] = rot[4 * i + k];
                n2 += q[k] * q[k];
            }
            double nn = std::sqrt(n2);
            require_numeric(nn > 1e-12, "quaternion collapsed during training");
            for (int k = 0; k < 4; ++k) g.rot[k] = float(q[k] / nn);
            for (int k = 0; k < 3; ++k)
                g.scale[k] = float(std::clamp(std::exp(log_scale[3 * i + k]), 1e-6, 1e6));
        }
        for (std::size_t k = 0; k < deform.size(); ++k) s.deformation.params[k] = float(deform[k]);
    }

    void write_appearance(Scene& s) const {
        std::size_t n = s.gaussians.size();
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian& g = s.gaussians[i];
            g.opacity = float(std::clamp(sigmoid(opacity_logit[i]), 1e-5, 1.0 - 1e-5));
            for (int k = 0; k < 3; ++k) g.color0[k] = float(color0[3 * i + k]);
            if (s.has_sh1)
                for (int k = 0; k < 9; ++k) g.color1[k] = float(color1[9 * i + k]);
        }
        if (!mlp.empty()) {
            float flat[TinyMlpParams::kCount];
            for (std::size_t i = 0; i < n; ++i) {
                for (int k = 0; k < TinyMlpParams::kCount; ++k)
                    flat[k] = float(mlp[std::size_t(TinyMlpParams::kCount) * i + k]);
                s.style_mlps[i] = TinyMlpParams::unflatten(flat);
            }
        }
    }
};

// Converts rasterizer gradients (w.r.t. stored fields) to master-parameter
// gradients (logit opacity, log scale).
inline void chain_to_masters(const Scene& s, SceneGrads& g) {
    std::size_t n = s.gaussians.size();
    for (std::size_t i = 0; i < n; ++i) {
        double o = double(s.gaussians[i].opacity);
        g.opacity[i] *= o * (1.0 - o);
        for (int k = 0; k < 3; ++k) g.scale[3 * i + k] *= double(s.gaussians[i].scale[k]);
    }
}

inline double psnr_of(const Image& a, const Image& b) {
    double mse = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = double(a.v[i]) - b.v[i];
        mse += d * d;
    }
    mse /= double(a.v.size());
    return mse <= 0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

// Deterministic epoch shuffling over sample indices.
struct BatchSampler {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    Rng rng;
    explicit BatchSampler(std::size_t n, std::uint64_t seed) : rng(seed, 19) {
        order.resize(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        reshuffle();
    }
    void reshuffle() {
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(std::uint32_t(i + 1))]);
        pos = 0;
    }
    std::size_t next() {
        if (pos >= order.size()) reshuffle();
        return order[pos++];
    }
};

} // namespace detail

struct TrainResult {
    Scene scene;
    double final_l1 = 0;     // mean |render - target| over the dataset
    double final_psnr = 0;   // mean PSNR over the dataset
};

// Mean L1 and PSNR of renders against the dataset.
inline void evaluate_fit(const Scene& scene, const Dataset& data, double* l1_out, double* psnr_out) {
    double l1 = 0, psnr = 0;
    for (const TrainSample& s : data) {
        RenderOutput out = render(scene, scene.cameras[s.cam_index], s.time);
        double acc = 0;
        for (std::size_t i = 0; i < out.image.v.size(); ++i)
            acc += std::abs(double(out.image.v[i]) - s.image.v[i]);
        l1 += acc / double(out.image.v.size());
        psnr += detail::psnr_of(out.image, s.image);
    }
    if (l1_out) *l1_out = l1 / double(data.size());
    if (psnr_out) *psnr_out = psnr / double(data.size());
}

// Stage one: fit Gaussian fields and the deformation network to the content
// frames under L1 + TV. The first quarter of the run is the coarse phase:
// the scene is rendered statically and the deformation field is frozen.
inline TrainResult train_geometry(Scene scene, const Dataset& data, const TrainConfig& cfg,
                                  const LogSink& log = nullptr,
                                  const std::function<void(int, const Scene&)>& checkpoint = nullptr) {
    validate(cfg);
    require(!data.empty(), "train_geometry: empty dataset");
    for (const TrainSample& s : data)
        require(s.cam_index >= 0 && s.cam_index < int(scene.cameras.size()),
                "train_geometry: sample camera index out of range");

    detail::ParamStore params = detail::ParamStore::from_scene(scene);
    AdamState st_mu, st_rot, st_scale, st_op, st_c0, st_c1, st_def;
    detail::BatchSampler sampler(data.size(), cfg.seed);

    const int total = cfg.iterations_geom;
    const int coarse = total / 4;
    for (int step = 0; step < total; ++step) {
        bool fine = step >= coarse;
        SceneGrads acc;
        acc.init(scene);
        double batch_loss = 0, batch_l1 = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const TrainSample& smp = data[sampler.next()];
            RenderCache rc;
            RenderOutput out =
                render(scene, scene.cameras[smp.cam_index], smp.time, RasterConfig{}, fine, &rc);
            MapD dimg;
            double l1 = 0;
            double loss = reconstruction_loss(to_mapd(out.image), to_mapd(smp.image), &dimg, &l1);
            batch_loss += loss;
            batch_l1 += l1;
            SceneGrads g = composite_backward(rc, to_image(dimg));
            acc.accumulate(g, 1.0 / cfg.batch_size);
        }
        batch_loss /= cfg.batch_size;
        batch_l1 /= cfg.batch_size;
        detail::chain_to_masters(scene, acc);

        double sched = lr_at(step, total, cfg) / cfg.lr_init;
        adam_step(params.mu, acc.mu, st_mu, cfg.lr_position * sched, "position");
        adam_step(params.rot, acc.rot, st_rot, cfg.lr_rotation * sched, "rotation");
        adam_step(params.log_scale, acc.scale, st_scale, cfg.lr_scale * sched, "scale");
        adam_step(params.opacity_logit, acc.opacity, st_op, cfg.lr_opacity * sched, "opacity");
        adam_step(params.color0, acc.color0, st_c0, cfg.lr_color * sched, "color0");
        if (scene.has_sh1) adam_step(params.color1, acc.color1, st_c1, cfg.lr_color * sched, "color1");
        if (fine && !params.deform.empty())
            adam_step(params.deform, acc.deform, st_def, cfg.lr_deform * sched, "deformation");

        params.write_geometry(scene);
        params.write_appearance(scene);

        if (log && (step % 50 == 0 || step + 1 == total))
            detail::log_row(log, "geometry", step, batch_loss, batch_l1,
                            lr_at(step, total, cfg), 0.0);
        if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            checkpoint(step + 1, scene);
    }

    TrainResult res;
    res.scene = std::move(scene);
    evaluate_fit(res.scene, data, &res.final_l1, &res.final_psnr);
    if (log) detail::log_row(log, "geometry", total, 0.0, res.final_l1, cfg.lr_final, res.final_psnr);
    return res;
}

// Stage two: freeze geometry (positions, rotations, scales, deformation),
// attach zero-output style MLPs, and fit MLPs plus base colors and opacities
// to the stylized frames. With use_style_mlps=false only colors and
// opacities train (the ablation baseline).
inline TrainResult train_style(Scene scene, const Dataset& stylized, const TrainConfig& cfg,
                               const LogSink& log = nullptr,
                               const std::function<void(int, const Scene&)>& checkpoint = nullptr) {
    validate(cfg);
    require(!stylized.empty(), "train_style: empty stylized dataset");
    for (const TrainSample& s : stylized)
        require(s.cam_index >= 0 && s.cam_index < int(scene.cameras.size()),
                "train_style: sample camera index out of range");

    if (cfg.use_style_mlps) {
        scene.style_mlps.clear();
        scene.style_mlps.reserve(scene.gaussians.size());
        for (std::size_t i = 0; i < scene.gaussians.size(); ++i)
            scene.style_mlps.push_back(mlp_init(derive_seed(cfg.seed, i, 0xA11)));
    } else {
        scene.style_mlps.clear();
    }

    detail::ParamStore params = detail::ParamStore::from_scene(scene);
    AdamState st_op, st_c0, st_c1, st_mlp;
    detail::BatchSampler sampler(stylized.size(), derive_seed(cfg.seed, 0x57));

    const int total = cfg.iterations_style;
    for (int step = 0; step < total; ++step) {
        SceneGrads acc;
        acc.init(scene);
        double batch_loss = 0, batch_l1 = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const TrainSample& smp = stylized[sampler.next()];
            RenderCache rc;
            RenderOutput out =
                render(scene, scene.cameras[smp.cam_index], smp.time, RasterConfig{}, true, &rc);
            MapD dimg;
            double l1 = 0;
            double loss = reconstruction_loss(to_mapd(out.image), to_mapd(smp.image), &dimg, &l1);
            batch_loss += loss;
            batch_l1 += l1;
            SceneGrads g = composite_backward(rc, to_image(dimg));
            acc.accumulate(g, 1.0 / cfg.batch_size);
        }
        batch_loss /= cfg.batch_size;
        batch_l1 /= cfg.batch_size;
        detail::chain_to_masters(scene, acc);

        double lr_sched = lr_at(step, total, cfg);
        double sched = lr_sched / cfg.lr_init;
        adam_step(params.opacity_logit, acc.opacity, st_op, cfg.lr_opacity * sched, "opacity");
        adam_step(params.color0, acc.color0, st_c0, cfg.lr_color * sched, "color0");
        if (scene.has_sh1) adam_step(params.color1, acc.color1, st_c1, cfg.lr_color * sched, "color1");
        if (cfg.use_style_mlps) adam_step(params.mlp, acc.mlp, st_mlp, lr_sched, "style_mlp");

        params.write_appearance(scene);

        if (log && (step % 50 == 0 || step + 1 == total))
            detail::log_row(log, "style", step, batch_loss, batch_l1, lr_sched, 0.0);
        if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            checkpoint(step + 1, scene);
    }

    TrainResult res;
    res.scene = std::move(scene);
    evaluate_fit(res.scene, stylized, &res.final_l1, &res.final_psnr);
    if (log) detail::log_row(log, "style", total, 0.0, res.final_l1, cfg.lr_final, res.final_psnr);
    return res;
}

} // namespace s4d
