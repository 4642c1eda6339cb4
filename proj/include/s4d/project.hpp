// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>

#include "s4d/camera.hpp"
#include "s4d/core.hpp"
#include "s4d/deform.hpp"
#include "s4d/gaussian.hpp"
#include "s4d/vecmath.hpp"

namespace s4d {

struct RasterConfig {
    double near_plane = 0.01;
    double sigma_cutoff = 3.0;  // cull splats further than this many sigmas
    double cov2d_floor = 0.3;   // px^2 added to the diagonal
    double early_exit_T = 1e-4;
    int tile = 16;
    // Exact mode: no sigma cutoff, no early exit. The adjoint then matches
    // finite differences everywhere; used by the gradient-check suites.
    bool exact = false;
};

// Screen-space footprint of one Gaussian. cov2d is packed symmetric (a, b, c)
// = (xx, xy, yy). The per-ray intersection depth is computed per pixel via
// intersect_depth(), not stored here.
struct Splat2D {
    int gaussian_index = -1;
    Vec2 mean2d;
    double cov2d[3] = {1, 0, 1};
    double conic[3] = {1, 0, 1}; // inverse covariance, packed (a, b, c)
    double view_depth = 0;
    double radius = 0; // sigma_cutoff * sqrt(max eigenvalue)
};

// EWA-style perspective projection. Returns nothing when the Gaussian is
// behind the near plane or its cutoff disk misses the frame entirely.
inline std::optional<Splat2D> project_attribs(const DeformedAttribs& att, int index,
                                              const Camera& cam, const RasterConfig& cfg) {
    Mat3 W = cam.rot();
    Vec3 p = W * att.mu + cam.trans();
    if (p.z <= cfg.near_plane) return std::nullopt;

    double inv_z = 1.0 / p.z;
    Vec2 mean2d{cam.fx * p.x * inv_z + cam.cx, cam.fy * p.y * inv_z + cam.cy};

    Vec3 j0{cam.fx * inv_z, 0.0, -cam.fx * p.x * inv_z * inv_z};
    Vec3 j1{0.0, cam.fy * inv_z, -cam.fy * p.y * inv_z * inv_z};

    Mat3 R = quat_to_mat(att.rot[0], att.rot[1], att.rot[2], att.rot[3]);
    Mat3 M = W * R;
    for (int r = 0; r < 3; ++r) {
        M(r, 0) *= att.scale.x;
        M(r, 1) *= att.scale.y;
        M(r, 2) *= att.scale.z;
    }
    Mat3 V = M * M.transposed();

    auto quad = [&](const Vec3& u, const Vec3& v) { return dot(u, V * v); };
    Splat2D s;
    s.gaussian_index = index;
    s.mean2d = mean2d;
    s.cov2d[0] = quad(j0, j0) + cfg.cov2d_floor;
    s.cov2d[1] = quad(j0, j1);
    s.cov2d[2] = quad(j1, j1) + cfg.cov2d_floor;
    s.view_depth = p.z;

    double det = s.cov2d[0] * s.cov2d[2] - s.cov2d[1] * s.cov2d[1];
    if (!(det > 1e-12) || !std::isfinite(det)) return std::nullopt;
    s.conic[0] = s.cov2d[2] / det;
    s.conic[1] = -s.cov2d[1] / det;
    s.conic[2] = s.cov2d[0] / det;

    double mid = 0.5 * (s.cov2d[0] + s.cov2d[2]);
    double disc = std::sqrt(std::max(0.0, mid * mid - det));
    s.radius = cfg.sigma_cutoff * std::sqrt(mid + disc);

    if (!cfg.exact) {
        if (s.mean2d.x + s.radius < 0 || s.mean2d.x - s.radius > cam.width - 1 ||
            s.mean2d.y + s.radius < 0 || s.mean2d.y - s.radius > cam.height - 1)
            return std::nullopt;
    }
    return s;
}

inline std::optional<Splat2D> project(const Gaussian& g, const Camera& cam,
                                      const RasterConfig& cfg = {}) {
    DeformedAttribs att;
    att.mu = g.mu_v();
    for (int i = 0; i < 4; ++i) att.rot[i] = att.rot_raw[i] = double(g.rot[i]);
    att.scale = g.scale_v();
    return project_attribs(att, 0, cam, cfg);
}

// Depth of maximal Gaussian density along a ray: whiten with A = S^-1 R^T,
// then p_t = -(o_g . d_g) / (d_g . d_g), clamped to >= 0.
inline double intersect_depth(const Vec3& origin, const Vec3& dir, const DeformedAttribs& att) {
    Mat3 R = quat_to_mat(att.rot[0], att.rot[1], att.rot[2], att.rot[3]);
    Vec3 v = origin - att.mu;
    Vec3 og{dot(R.col(0), v) / att.scale.x, dot(R.col(1), v) / att.scale.y,
            dot(R.col(2), v) / att.scale.z};
    Vec3 dg{dot(R.col(0), dir) / att.scale.x, dot(R.col(1), dir) / att.scale.y,
            dot(R.col(2), dir) / att.scale.z};
    double denom = dot(dg, dg);
    require_numeric(denom > 1e-24, "intersect_depth: degenerate whitened ray direction");
    double s = -dot(og, dg) / denom;
    return s > 0 ? s : 0.0;
}

inline double intersect_depth(const Vec3& origin, const Vec3& dir, const Gaussian& g) {
    DeformedAttribs att;
    att.mu = g.mu_v();
    for (int i = 0; i < 4; ++i) att.rot[i] = double(g.rot[i]);
    att.scale = g.scale_v();
    return intersect_depth(origin, dir, att);
}

} // namespace s4d
