// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>

#include "s4d/core.hpp"
#include "s4d/mlp.hpp"
#include "s4d/vecmath.hpp"

namespace s4d {

// Scene primitive. `color0` is the degree-0 color (used directly as RGB);
// `color1` holds the optional three degree-1 coefficients per channel,
// laid out [c1a_r, c1a_g, c1a_b, c1b_r, ..., c1c_b].
struct Gaussian {
    std::array<float, 3> mu{0, 0, 0};
    std::array<float, 4> rot{1, 0, 0, 0}; // (w, x, y, z), unit
    std::array<float, 3> scale{1, 1, 1};  // per-axis stddev, > 0
    float opacity = 0.5f;                 // in (0, 1)
    std::array<float, 3> color0{0, 0, 0};
    std::array<float, 9> color1{};        // used only when Scene::has_sh1

    Vec3 mu_v() const { return {mu[0], mu[1], mu[2]}; }
    Vec3 scale_v() const { return {scale[0], scale[1], scale[2]}; }
};

inline void validate(const Gaussian& g, std::size_t index) {
    double n2 = 0;
    for (float q : g.rot) n2 += double(q) * q;
    require(std::abs(std::sqrt(n2) - 1.0) < 1e-5,
            "gaussian " + std::to_string(index) + ": quaternion is not unit length");
    for (float s : g.scale)
        require(s > 0, "gaussian " + std::to_string(index) + ": scale must be positive");
    require(g.opacity > 0.f && g.opacity < 1.f,
            "gaussian " + std::to_string(index) + ": opacity must be in (0,1)");
    for (float m : g.mu)
        require(std::isfinite(m), "gaussian " + std::to_string(index) + ": non-finite position");
}

// A Gaussian plus its per-Gaussian style MLP.
struct StyleGaussian {
    Gaussian base;
    TinyMlpParams style_mlp;
};

} // namespace s4d
