// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/featuremap.hpp"
#include "s4d/image.hpp"
#include "s4d/losses.hpp"
#include "s4d/pyramid.hpp"
#include "s4d/rng.hpp"

namespace s4d {

// Produces stylized supervision frames by direct Adam optimization of the
// frame pixels under the full objective. Style statistics are matched on
// levels 1-5; the consistency terms run on attended levels 3-5 against the
// content features; the inner-channel term runs on raw levels 3-5.
//
// The identity and illumination components are constants of the subproblem
// under pixel optimization (no generator network parameters exist): the
// identity renders come from short auxiliary runs, and the illumination
// response is modeled to first order as G(I_c + eps) = G(I_c) + eps, making
// the component the mean squared noise. Both still appear in every trace.

struct StylizeOptions {
    LossWeights weights;
    int iterations = 300;
    double step_size = 0.02; // Adam lr on pixels
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int id_iterations = 25; // budget for the I_cc / I_ss auxiliary runs
};

struct StylizeResult {
    Image image;
    std::vector<HgstTotal> trace;
};

namespace detail {

struct HgstContext {
    LossWeights w;
    MapD content, style;
    std::vector<MapD> att_c;  // attended content levels 3-5
    std::array<MapD, kPyrLevels> style_levels;
    double id_component = 0;
    double illum_component = 0;
    std::uint64_t seed = 0;
};

struct HgstEval {
    HgstTotal value;
    MapD pixel_grad;
};

inline HgstEval hgst_eval(const HgstContext& ctx, const MapD& img, bool want_grad) {
    HgstEval out;
    PyrTrace tr = pyramid_forward_d(img);

    // Attended levels 3-5 of the candidate.
    std::vector<MapD> att_cs(3);
    std::array<AttendTrace, 3> att_traces;
    for (int l = 2; l < kPyrLevels; ++l)
        att_cs[l - 2] = attend_d(tr.act[l], want_grad ? &att_traces[l - 2] : nullptr);

    std::array<MapD, kPyrLevels> dlevels; // dL/d(raw level activations)
    std::vector<MapD> dcons;              // dconsistency/d(attended levels)

    ConsistencyResult cons = consistency_loss(att_cs, ctx.att_c, ctx.w.n_samples, ctx.w.tau,
                                              ctx.seed, want_grad ? &dcons : nullptr);

    PyramidD cs_view;
    cs_view.levels = tr.act;
    PyramidD style_view;
    style_view.levels = ctx.style_levels;
    double style_v = style_loss(cs_view, style_view, want_grad ? &dlevels : nullptr);
    if (want_grad)
        for (int l = 0; l < kPyrLevels; ++l)
            if (!dlevels[l].v.empty())
                for (double& v : dlevels[l].v) v *= ctx.w.style;

    // Inner-channel coherence on raw levels 3-5.
    double ins_v = 0;
    for (int l = 2; l < kPyrLevels; ++l) {
        MapD dins;
        double v = inner_channel_loss(tr.act[l], want_grad ? &dins : nullptr);
        ins_v += v / 3.0;
        if (want_grad) {
            if (dlevels[l].v.empty()) dlevels[l] = MapD(tr.act[l].h, tr.act[l].w, tr.act[l].c);
            double scale = ctx.w.ins / 3.0;
            for (std::size_t i = 0; i < dins.v.size(); ++i) dlevels[l].v[i] += scale * dins.v[i];
        }
    }

    HgstComponents comp;
    comp.consistency = cons.total;
    comp.lcl = cons.lcl;
    comp.content = cons.content;
    comp.style = style_v;
    comp.ins = ins_v;
    comp.id = ctx.id_component;
    comp.illum = ctx.illum_component;
    out.value = total_hgst_loss(comp, ctx.w);

    if (want_grad) {
        for (int l = 2; l < kPyrLevels; ++l) {
            if (dcons.size() > std::size_t(l - 2) && !dcons[l - 2].v.empty()) {
                MapD datt = dcons[l - 2];
                for (double& v : datt.v) v *= ctx.w.consistency;
                if (dlevels[l].v.empty()) dlevels[l] = MapD(tr.act[l].h, tr.act[l].w, tr.act[l].c);
                attend_backward_d(att_traces[l - 2], datt, dlevels[l]);
            }
        }
        out.pixel_grad = pyramid_backward_d(tr, dlevels);
    }
    return out;
}

// Adam on pixels with a [0,1] clamp after every step.
inline MapD optimize_pixels(const HgstContext& ctx, const MapD& init, int iterations,
                            const StylizeOptions& opt, std::vector<HgstTotal>* trace) {
    MapD x = init;
    std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);
    for (int it = 1; it <= iterations; ++it) {
        HgstEval ev = hgst_eval(ctx, x, true);
        require_numeric(std::isfinite(ev.value.total),
                        "stylizer: non-finite loss at iteration " + std::to_string(it));
        if (trace) trace->push_back(ev.value);
        double bc1 = 1.0 - std::pow(opt.beta1, it);
        double bc2 = 1.0 - std::pow(opt.beta2, it);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double g = ev.pixel_grad.v[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
            double step = opt.step_size * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
            x.v[i] = std::clamp(x.v[i] - step, 0.0, 1.0);
        }
    }
    return x;
}

inline HgstContext make_context(const MapD& content, const MapD& style, const LossWeights& w,
                                std::uint64_t seed) {
    HgstContext ctx;
    ctx.w = w;
    ctx.content = content;
    ctx.style = style;
    ctx.seed = seed;
    PyrTrace ct = pyramid_forward_d(content);
    for (int l = 2; l < kPyrLevels; ++l) ctx.att_c.push_back(attend_d(ct.act[l]));
    PyrTrace st = pyramid_forward_d(style);
    ctx.style_levels = st.act;
    return ctx;
}

} // namespace detail

// Stylizes one frame. `warm_start` (optional) seeds the optimization;
// otherwise the content frame does. `id_ss` may carry a precomputed
// style-identity render so sequences do not repeat the (style, style) run.
inline StylizeResult stylize_frame(const Image& content, const Image& style,
                                   const StylizeOptions& opt, std::uint64_t seed,
                                   const MapD* warm_start = nullptr,
                                   const MapD* id_ss = nullptr) {
    validate(opt.weights);
    require(opt.iterations >= 1, "stylizer: iterations must be >= 1");
    MapD c = to_mapd(content), s = to_mapd(style);

    detail::HgstContext ctx = detail::make_context(c, s, opt.weights, seed);

    // Identity renders from short auxiliary runs with (content, content) and
    // (style, style); their own id/illum components are zero.
    if (opt.weights.id > 0 && opt.id_iterations > 0) {
        LossWeights aux_w = opt.weights;
        aux_w.id = 0;
        aux_w.illum = 0;
        detail::HgstContext cc_ctx = detail::make_context(c, c, aux_w, derive_seed(seed, 101));
        MapD i_cc = detail::optimize_pixels(cc_ctx, c, opt.id_iterations, opt, nullptr);
        MapD i_ss;
        if (id_ss) {
            i_ss = *id_ss;
        } else {
            detail::HgstContext ss_ctx = detail::make_context(s, s, aux_w, derive_seed(seed, 102));
            i_ss = detail::optimize_pixels(ss_ctx, s, opt.id_iterations, opt, nullptr);
        }
        ctx.id_component = identity_loss(i_cc, c, i_ss, s);
    }
    if (opt.weights.illum > 0) {
        auto identity_on_content = [](const MapD& a, const MapD&) { return a; };
        ctx.illum_component = illumination_loss(identity_on_content, c, s,
                                                opt.weights.illum_sigma, derive_seed(seed, 103));
    }

    StylizeResult res;
    MapD x = detail::optimize_pixels(ctx, warm_start ? *warm_start : c, opt.iterations, opt,
                                     &res.trace);
    res.image = to_image(x);
    return res;
}

// ---------------------------------------------------------------- sequences

struct FrameKey {
    int cam = 0;
    int time_index = 0;
    bool operator<(const FrameKey& o) const {
        return cam != o.cam ? cam < o.cam : time_index < o.time_index;
    }
};

struct StylizeJob {
    std::vector<FrameKey> keys;
    std::vector<Image> content_frames; // parallel to keys
    Image style;
    StylizeOptions options;
    std::uint64_t seed = 1;
};

// Stylizes a multi-camera sequence: warm start along time within a camera,
// cold start across cameras. A frame whose content is bit-identical to the
// previous time step reuses that result outright (the subproblem is
// identical). Camera chains are independent and may run in parallel; the
// result order matches the input keys.
inline std::vector<Image> stylize_sequence(const StylizeJob& job) {
    require(job.keys.size() == job.content_frames.size() && !job.keys.empty(),
            "stylize_sequence: keys and frames must match");
    std::map<FrameKey, std::size_t> order;
    for (std::size_t i = 0; i < job.keys.size(); ++i) {
        require(!order.count(job.keys[i]), "stylize_sequence: duplicate frame key");
        order[job.keys[i]] = i;
    }

    // Shared (style, style) identity render, computed once per job.
    MapD id_ss;
    {
        LossWeights aux_w = job.options.weights;
        aux_w.id = 0;
        aux_w.illum = 0;
        MapD s = to_mapd(job.style);
        if (job.options.weights.id > 0 && job.options.id_iterations > 0) {
            detail::HgstContext ss_ctx =
                detail::make_context(s, s, aux_w, derive_seed(job.seed, 102));
            id_ss = detail::optimize_pixels(ss_ctx, s, job.options.id_iterations, job.options,
                                            nullptr);
        } else {
            id_ss = s;
        }
    }

    // Group frame indices per camera, ordered by time.
    std::map<int, std::vector<std::size_t>> chains;
    for (const auto& [key, idx] : order) chains[key.cam].push_back(idx);

    std::vector<int> cams;
    for (const auto& [cam, _] : chains) cams.push_back(cam);

    std::vector<Image> results(job.keys.size());
    parallel_for(cams.size(), [&](std::size_t ci) {
        const auto& chain = chains[cams[ci]];
        MapD warm;
        const Image* prev_content = nullptr;
        const Image* prev_result = nullptr;
        for (std::size_t idx : chain) {
            const Image& content = job.content_frames[idx];
            const FrameKey& key = job.keys[idx];
            if (prev_content && prev_content->same_shape(content) &&
                std::memcmp(prev_content->v.data(), content.v.data(), content.v.size() * 4) == 0) {
                results[idx] = *prev_result;
            } else {
                std::uint64_t seed = derive_seed(job.seed, std::uint64_t(key.cam));
                StylizeResult r = stylize_frame(content, job.style, job.options, seed,
                                                warm.v.empty() ? nullptr : &warm, &id_ss);
                results[idx] = std::move(r.image);
            }
            warm = to_mapd(results[idx]);
            prev_content = &content;
            prev_result = &results[idx];
        }
    });
    return results;
}

} // namespace s4d
