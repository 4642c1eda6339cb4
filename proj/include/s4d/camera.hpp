// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/vecmath.hpp"

namespace s4d {

// Pinhole camera. `rotation` maps world to camera coordinates (row-major),
// `translation` is the world origin expressed in the camera frame, so
// p_cam = R p_world + T. The camera looks along +z.
struct Camera {
    std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<float, 3> translation{0, 0, 0};
    float fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 0, height = 0;

    Mat3 rot() const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = rotation[i];
        return r;
    }
    Vec3 trans() const { return {translation[0], translation[1], translation[2]}; }
    Vec3 center() const { return rot().transposed_mul(trans()) * -1.0; }

    // World-space unit direction through pixel (px, py); pixel centers are
    // at integer coordinates.
    Vec3 pixel_ray(double px, double py) const {
        Vec3 d{(px - cx) / fx, (py - cy) / fy, 1.0};
        return normalized(rot().transposed_mul(d));
    }
};

inline void validate(const Camera& cam) {
    Mat3 r = cam.rot();
    Mat3 rtr = r.transposed() * r;
    double maxdev = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            maxdev = std::max(maxdev, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
    require(maxdev < 1e-5, "camera rotation is not orthonormal");
    require(cam.fx > 0 && cam.fy > 0, "camera focal lengths must be positive");
    require(cam.width > 0 && cam.height > 0, "camera size must be positive");
    require(cam.cx >= 0 && cam.cx < cam.width, "camera cx out of range");
    require(cam.cy >= 0 && cam.cy < cam.height, "camera cy out of range");
}

// World->camera look-at: camera at `eye`, +z pointing toward `target`.
inline Camera look_at(const Vec3& eye, const Vec3& target, float fx, float fy,
                      float cx, float cy, int w, int h) {
    Vec3 zc = normalized(target - eye);
    Vec3 up{0, 0, 1};
    if (std::abs(dot(zc, up)) > 0.999) up = {0, 1, 0};
    Vec3 xc = normalized(cross(up, zc));
    Vec3 yc = cross(zc, xc);
    Camera cam;
    cam.rotation = {float(xc.x), float(xc.y), float(xc.z),
                    float(yc.x), float(yc.y), float(yc.z),
                    float(zc.x), float(zc.y), float(zc.z)};
    Vec3 t = cam.rot() * eye * -1.0;
    cam.translation = {float(t.x), float(t.y), float(t.z)};
    cam.fx = fx; cam.fy = fy; cam.cx = cx; cam.cy = cy;
    cam.width = w; cam.height = h;
    return cam;
}

// Plain-text camera list: one camera per line, "r00..r22 tx ty tz fx fy cx cy w h".
inline void save_cameras_txt(const std::vector<Camera>& cams, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "cannot open for write: " + path);
    f.precision(9);
    for (const Camera& c : cams) {
        for (float r : c.rotation) f << r << ' ';
        for (float t : c.translation) f << t << ' ';
        f << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' '
          << c.width << ' ' << c.height << '\n';
    }
    require(f.good(), "write failed: " + path);
}

inline std::vector<Camera> load_cameras_txt(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open: " + path);
    std::vector<Camera> cams;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Camera c;
        for (float& r : c.rotation) ss >> r;
        for (float& t : c.translation) ss >> t;
        ss >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height;
        require(bool(ss), "bad camera line " + std::to_string(lineno) + " in " + path);
        validate(c);
        cams.push_back(c);
    }
    return cams;
}

} // namespace s4d
