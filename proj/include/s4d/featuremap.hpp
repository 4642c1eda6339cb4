// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/image.hpp"

namespace s4d {

// Planar double feature map; the differentiable loss pipeline runs on these.
struct MapD {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    MapD() = default;
    MapD(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, fill) {}

    double& at(int ch, int y, int x) { return v[(std::size_t(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return v[(std::size_t(ch) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const MapD& o) const { return h == o.h && w == o.w && c == o.c; }
};

inline MapD to_mapd(const Image& img) {
    MapD m(img.h, img.w, img.c);
    for (std::size_t i = 0; i < img.v.size(); ++i) m.v[i] = img.v[i];
    return m;
}

inline Image to_image(const MapD& m) {
    Image img(m.h, m.w, m.c);
    for (std::size_t i = 0; i < m.v.size(); ++i) img.v[i] = float(m.v[i]);
    return img;
}

// Per-channel spatial mean and population standard deviation.
struct FeatureStats {
    std::vector<double> mean, std;
};

// Sums run over sorted copies so the result is exactly invariant to spatial
// permutations of the map, not merely up to rounding.
inline FeatureStats stats(const MapD& m) {
    require(m.h > 0 && m.w > 0 && m.c > 0, "stats: empty feature map");
    FeatureStats st;
    st.mean.resize(m.c);
    st.std.resize(m.c);
    const std::size_t n = std::size_t(m.h) * m.w;
    std::vector<double> buf(n);
    for (int ch = 0; ch < m.c; ++ch) {
        const double* p = m.v.data() + std::size_t(ch) * n;
        std::copy(p, p + n, buf.begin());
        std::sort(buf.begin(), buf.end());
        double acc = 0;
        for (double v : buf) acc += v;
        double mu = acc / double(n);
        for (double& v : buf) {
            double d = v - mu;
            v = d * d;
        }
        std::sort(buf.begin(), buf.end());
        double var = 0;
        for (double v : buf) var += v;
        st.mean[ch] = mu;
        st.std[ch] = std::sqrt(var / double(n));
    }
    return st;
}

inline FeatureStats stats(const Image& img) { return stats(to_mapd(img)); }

} // namespace s4d
