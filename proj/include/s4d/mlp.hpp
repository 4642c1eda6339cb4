// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

#include "s4d/core.hpp"
#include "s4d/rng.hpp"

namespace s4d {

// Per-Gaussian appearance MLP: (time, depth) -> 4 hidden ReLU units ->
// (rgb delta, opacity logit delta). Two layers, 32 parameters, exposed as a
// flat vector with layout [w1 row-major | b1 | w2 row-major | b2].
struct TinyMlpParams {
    static constexpr int kIn = 2;
    static constexpr int kHidden = 4;
    static constexpr int kOut = 4;
    static constexpr int kCount = kHidden * kIn + kHidden + kOut * kHidden + kOut; // 32

    std::array<float, kHidden * kIn> w1{};
    std::array<float, kHidden> b1{};
    std::array<float, kOut * kHidden> w2{};
    std::array<float, kOut> b2{};

    void flatten(float* out) const {
        int k = 0;
        for (float v : w1) out[k++] = v;
        for (float v : b1) out[k++] = v;
        for (float v : w2) out[k++] = v;
        for (float v : b2) out[k++] = v;
    }
    static TinyMlpParams unflatten(const float* in) {
        TinyMlpParams p;
        int k = 0;
        for (float& v : p.w1) v = in[k++];
        for (float& v : p.b1) v = in[k++];
        for (float& v : p.w2) v = in[k++];
        for (float& v : p.b2) v = in[k++];
        return p;
    }
    bool finite() const {
        auto ok = [](const auto& a) {
            for (float v : a)
                if (!std::isfinite(v)) return false;
            return true;
        };
        return ok(w1) && ok(b1) && ok(w2) && ok(b2);
    }
};

struct MlpOut {
    double rgb[3] = {0, 0, 0};
    double opacity_logit = 0;
    // Retained hidden pre-activations for the backward pass.
    double z1[TinyMlpParams::kHidden] = {0, 0, 0, 0};
};

inline MlpOut mlp_forward(const TinyMlpParams& p, double t, double depth) {
    MlpOut o;
    double in[2] = {t, depth};
    double h[TinyMlpParams::kHidden];
    for (int i = 0; i < TinyMlpParams::kHidden; ++i) {
        double z = p.b1[i];
        for (int j = 0; j < 2; ++j) z += double(p.w1[i * 2 + j]) * in[j];
        o.z1[i] = z;
        h[i] = z > 0 ? z : 0.0;
    }
    double out[TinyMlpParams::kOut];
    for (int i = 0; i < TinyMlpParams::kOut; ++i) {
        double z = p.b2[i];
        for (int j = 0; j < TinyMlpParams::kHidden; ++j) z += double(p.w2[i * 4 + j]) * h[j];
        out[i] = z;
    }
    o.rgb[0] = out[0];
    o.rgb[1] = out[1];
    o.rgb[2] = out[2];
    o.opacity_logit = out[3];
    return o;
}

// Exact adjoint of mlp_forward. `upstream` is dL/d(rgb, opacity_logit).
// Accumulates into `param_grad` (kCount doubles) and `input_grad` (2 doubles).
inline void mlp_backward(const TinyMlpParams& p, double t, double depth, const MlpOut& fwd,
                         const double upstream[4], double* param_grad, double input_grad[2]) {
    constexpr int H = TinyMlpParams::kHidden;
    double in[2] = {t, depth};
    double h[H];
    for (int i = 0; i < H; ++i) h[i] = fwd.z1[i] > 0 ? fwd.z1[i] : 0.0;

    const int off_b1 = H * 2;
    const int off_w2 = off_b1 + H;
    const int off_b2 = off_w2 + 4 * H;

    double dh[H] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
        double g = upstream[i];
        param_grad[off_b2 + i] += g;
        for (int j = 0; j < H; ++j) {
            param_grad[off_w2 + i * H + j] += g * h[j];
            dh[j] += g * double(p.w2[i * H + j]);
        }
    }
    for (int i = 0; i < H; ++i) {
        double dz = fwd.z1[i] > 0 ? dh[i] : 0.0;
        param_grad[off_b1 + i] += dz;
        for (int j = 0; j < 2; ++j) {
            param_grad[i * 2 + j] += dz * in[j];
            input_grad[j] += dz * double(p.w1[i * 2 + j]);
        }
    }
}

// First layer uniform in +-1/sqrt(fan_in); output layer exactly zero, so a
// freshly attached MLP leaves the render unchanged.
inline TinyMlpParams mlp_init(std::uint64_t seed) {
    TinyMlpParams p;
    Rng rng(seed, 7);
    double bound = 1.0 / std::sqrt(double(TinyMlpParams::kIn));
    for (float& v : p.w1) v = float(rng.uniform(-bound, bound));
    for (float& v : p.b1) v = float(rng.uniform(-bound, bound));
    for (float& v : p.w2) v = 0.0f;
    for (float& v : p.b2) v = 0.0f;
    return p;
}

} // namespace s4d
