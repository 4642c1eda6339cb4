// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/gaussian.hpp"
#include "s4d/rng.hpp"
#include "s4d/vecmath.hpp"

namespace s4d {

// Coordinate network mapping sinusoidally encoded (x, y, z, t) to per-Gaussian
// deltas (dmu[3], drot[4], dscale[3]). Two ReLU hidden layers. The output
// layer is zero-initialized so an untrained field is the identity map.
//
// Parameter layout: [W1 (hidden x in) | b1 | W2 (hidden x hidden) | b2 |
// W3 (10 x hidden) | b3].
struct DeformationField {
    int encoding_frequencies = 4;
    int hidden = 32;
    std::vector<float> params; // empty or zero => identity map

    static constexpr int kOut = 10;

    int input_dim() const { return 4 + 4 * 2 * encoding_frequencies; }
    int param_count() const {
        int in = input_dim();
        return hidden * in + hidden + hidden * hidden + hidden + kOut * hidden + kOut;
    }

    bool is_zero() const {
        for (float p : params)
            if (p != 0.f) return false;
        return true;
    }

    // Hidden layers random, output layer zero: deltas start at exactly zero.
    static DeformationField init(std::uint64_t seed, int frequencies = 4, int hidden_width = 32) {
        DeformationField f;
        f.encoding_frequencies = frequencies;
        f.hidden = hidden_width;
        f.params.assign(std::size_t(f.param_count()), 0.f);
        Rng rng(seed, 11);
        int in = f.input_dim();
        std::size_t k = 0;
        double b1 = std::sqrt(6.0 / in);
        for (int i = 0; i < f.hidden * in; ++i) f.params[k++] = float(rng.uniform(-b1, b1));
        k += std::size_t(f.hidden); // b1 = 0
        double b2 = std::sqrt(6.0 / f.hidden);
        for (int i = 0; i < f.hidden * f.hidden; ++i) f.params[k++] = float(rng.uniform(-b2, b2));
        // b2, W3, b3 stay zero
        return f;
    }
};

namespace detail {

inline void deform_encode(const DeformationField& f, const double in4[4], std::vector<double>& enc) {
    enc.resize(std::size_t(f.input_dim()));
    std::size_t k = 0;
    for (int i = 0; i < 4; ++i) enc[k++] = in4[i];
    for (int i = 0; i < 4; ++i)
        for (int fr = 0; fr < f.encoding_frequencies; ++fr) {
            double s = std::ldexp(3.14159265358979323846, fr) * in4[i]; // 2^fr * pi * v
            enc[k++] = std::sin(s);
            enc[k++] = std::cos(s);
        }
}

} // namespace detail

// Forward activations retained for the backward pass.
struct DeformEval {
    double delta[DeformationField::kOut] = {};
    std::vector<double> enc, z1, z2; // pre-activations
    bool identity = true;
};

inline DeformEval deform_eval(const DeformationField& f, const Vec3& mu, double t) {
    DeformEval ev;
    if (f.params.empty() || f.is_zero()) return ev; // exact identity
    ev.identity = false;
    double in4[4] = {mu.x, mu.y, mu.z, t};
    detail::deform_encode(f, in4, ev.enc);
    const int in = f.input_dim(), H = f.hidden;
    const float* W1 = f.params.data();
    const float* B1 = W1 + std::size_t(H) * in;
    const float* W2 = B1 + H;
    const float* B2 = W2 + std::size_t(H) * H;
    const float* W3 = B2 + H;
    const float* B3 = W3 + std::size_t(DeformationField::kOut) * H;

    ev.z1.resize(H);
    for (int i = 0; i < H; ++i) {
        double z = B1[i];
        for (int j = 0; j < in; ++j) z += double(W1[std::size_t(i) * in + j]) * ev.enc[j];
        ev.z1[i] = z;
    }
    ev.z2.resize(H);
    for (int i = 0; i < H; ++i) {
        double z = B2[i];
        for (int j = 0; j < H; ++j) {
            double hj = ev.z1[j] > 0 ? ev.z1[j] : 0.0;
            z += double(W2[std::size_t(i) * H + j]) * hj;
        }
        ev.z2[i] = z;
    }
    for (int i = 0; i < DeformationField::kOut; ++i) {
        double z = B3[i];
        for (int j = 0; j < H; ++j) {
            double hj = ev.z2[j] > 0 ? ev.z2[j] : 0.0;
            z += double(W3[std::size_t(i) * H + j]) * hj;
        }
        ev.delta[i] = z;
    }
    return ev;
}

// Applies the field: mu + dmu, normalize(rot + drot), scale * exp(dscale).
// Opacity and color pass through. Exact identity for a zero field.
inline Gaussian deform(const Gaussian& g, const DeformationField& f, double t,
                       std::size_t index = 0, DeformEval* eval_out = nullptr) {
    DeformEval ev = deform_eval(f, g.mu_v(), t);
    if (eval_out) *eval_out = ev;
    if (ev.identity) return g;
    for (double d : ev.delta)
        require_numeric(std::isfinite(d), "deformation produced non-finite output for gaussian " +
                                              std::to_string(index));
    Gaussian out = g;
    for (int i = 0; i < 3; ++i) out.mu[i] = float(double(g.mu[i]) + ev.delta[i]);
    double q[4];
    double n2 = 0;
    for (int i = 0; i < 4; ++i) {
        q[i] = double(g.rot[i]) + ev.delta[3 + i];
        n2 += q[i] * q[i];
    }
    double n = std::sqrt(n2);
    require_numeric(n > 1e-12, "deformed quaternion collapsed for gaussian " + std::to_string(index));
    for (int i = 0; i < 4; ++i) out.rot[i] = float(q[i] / n);
    for (int i = 0; i < 3; ++i) out.scale[i] = float(double(g.scale[i]) * std::exp(ev.delta[7 + i]));
    return out;
}

// Double-precision deformed attributes, used inside the rasterizer so the
// gradient chain is computed on unrounded values.
struct DeformedAttribs {
    Vec3 mu;
    double rot[4];   // normalized
    double rot_raw[4];
    double rot_norm = 1.0;
    Vec3 scale;
    DeformEval eval;
};

inline DeformedAttribs deform_attribs(const Gaussian& g, const DeformationField* f, double t,
                                      std::size_t index = 0) {
    DeformedAttribs out;
    out.eval = f ? deform_eval(*f, g.mu_v(), t) : DeformEval{};
    const double* d = out.eval.delta;
    if (out.eval.identity) {
        out.mu = g.mu_v();
        for (int i = 0; i < 4; ++i) out.rot[i] = out.rot_raw[i] = double(g.rot[i]);
        out.rot_norm = 1.0;
        out.scale = g.scale_v();
        return out;
    }
    for (int i = 0; i < DeformationField::kOut; ++i)
        require_numeric(std::isfinite(d[i]), "deformation produced non-finite output for gaussian " +
                                                 std::to_string(index));
    out.mu = {double(g.mu[0]) + d[0], double(g.mu[1]) + d[1], double(g.mu[2]) + d[2]};
    double n2 = 0;
    for (int i = 0; i < 4; ++i) {
        out.rot_raw[i] = double(g.rot[i]) + d[3 + i];
        n2 += out.rot_raw[i] * out.rot_raw[i];
    }
    out.rot_norm = std::sqrt(n2);
    require_numeric(out.rot_norm > 1e-12,
                    "deformed quaternion collapsed for gaussian " + std::to_string(index));
    for (int i = 0; i < 4; ++i) out.rot[i] = out.rot_raw[i] / out.rot_norm;
    out.scale = {double(g.scale[0]) * std::exp(d[7]),
                 double(g.scale[1]) * std::exp(d[8]),
                 double(g.scale[2]) * std::exp(d[9])};
    return out;
}

// Adjoint of deform_attribs. Takes gradients w.r.t. the deformed mu / unit
// rot / scale and accumulates gradients w.r.t. the canonical Gaussian fields
// (mu_grad[3], rot_grad[4], scale_grad[3]) and the field parameters.
inline void deform_backward(const Gaussian& g, const DeformationField* f, double t,
                            const DeformedAttribs& att,
                            const double dmu[3], const double drot_unit[4], const double dscale[3],
                            double mu_grad[3], double rot_grad[4], double scale_grad[3],
                            double* field_grad) {
    if (att.eval.identity) {
        for (int i = 0; i < 3; ++i) mu_grad[i] += dmu[i];
        for (int i = 0; i < 4; ++i) rot_grad[i] += drot_unit[i];
        for (int i = 0; i < 3; ++i) scale_grad[i] += dscale[i];
        return;
    }

    double ddelta[DeformationField::kOut] = {};
    // mu' = mu + dmu
    for (int i = 0; i < 3; ++i) {
        mu_grad[i] += dmu[i];
        ddelta[i] = dmu[i];
    }
    // q' = v / |v|, v = q + dq  =>  dv = (I - q' q'^T) / |v| * dq'
    double dotg = 0;
    for (int i = 0; i < 4; ++i) dotg += drot_unit[i] * att.rot[i];
    for (int i = 0; i < 4; ++i) {
        double dv = (drot_unit[i] - dotg * att.rot[i]) / att.rot_norm;
        rot_grad[i] += dv;
        ddelta[3 + i] = dv;
    }
    // s' = s * exp(ds)
    for (int i = 0; i < 3; ++i) {
        double e = std::exp(att.eval.delta[7 + i]);
        scale_grad[i] += dscale[i] * e;
        ddelta[7 + i] = dscale[i] * double(g.scale[i]) * e;
    }

    // Through the network to its params and to the encoded position.
    const DeformationField& fd = *f;
    const int in = fd.input_dim(), H = fd.hidden;
    const float* W1 = fd.params.data();
    const float* W2 = W1 + std::size_t(H) * in + H;
    const float* W3 = W2 + std::size_t(H) * H + H;
    const std::size_t off_b1 = std::size_t(H) * in;
    const std::size_t off_w2 = off_b1 + H;
    const std::size_t off_b2 = off_w2 + std::size_t(H) * H;
    const std::size_t off_w3 = off_b2 + H;
    const std::size_t off_b3 = off_w3 + std::size_t(DeformationField::kOut) * H;

    const DeformEval& ev = att.eval;
    std::vector<double> dh2(H, 0.0), dh1(H, 0.0), denc(in, 0.0);
    for (int i = 0; i < DeformationField::kOut; ++i) {
        double gidx = ddelta[i];
        if (gidx == 0) continue;
        field_grad[off_b3 + i] += gidx;
        for (int j = 0; j < H; ++j) {
            double hj = ev.z2[j] > 0 ? ev.z2[j] : 0.0;
            field_grad[off_w3 + std::size_t(i) * H + j] += gidx * hj;
            dh2[j] += gidx * double(W3[std::size_t(i) * H + j]);
        }
    }
    for (int i = 0; i < H; ++i) {
        double dz = ev.z2[i] > 0 ? dh2[i] : 0.0;
        if (dz == 0) continue;
        field_grad[off_b2 + i] += dz;
        for (int j = 0; j < H; ++j) {
            double hj = ev.z1[j] > 0 ? ev.z1[j] : 0.0;
            field_grad[off_w2 + std::size_t(i) * H + j] += dz * hj;
            dh1[j] += dz * double(W2[std::size_t(i) * H + j]);
        }
    }
    for (int i = 0; i < H; ++i) {
        double dz = ev.z1[i] > 0 ? dh1[i] : 0.0;
        if (dz == 0) continue;
        field_grad[off_b1 + i] += dz;
        for (int j = 0; j < in; ++j) {
            field_grad[std::size_t(i) * in + j] += dz * ev.enc[j];
            denc[j] += dz * double(W1[std::size_t(i) * in + j]);
        }
    }
    // Encoding backward into the canonical position (t gets no gradient).
    double din4[4] = {denc[0], denc[1], denc[2], denc[3]};
    double in4[4] = {att.eval.enc[0], att.eval.enc[1], att.eval.enc[2], att.eval.enc[3]};
    std::size_t k = 4;
    for (int i = 0; i < 4; ++i)
        for (int fr = 0; fr < fd.encoding_frequencies; ++fr) {
            double w = std::ldexp(3.14159265358979323846, fr);
            double s = w * in4[i];
            din4[i] += denc[k++] * w * std::cos(s);
            din4[i] -= denc[k++] * w * std::sin(s);
        }
    for (int i = 0; i < 3; ++i) mu_grad[i] += din4[i];
}

} // namespace s4d
