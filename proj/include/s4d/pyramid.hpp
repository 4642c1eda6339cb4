// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/featuremap.hpp"
#include "s4d/image.hpp"
#include "s4d/rng.hpp"
#include "s4d/vecmath.hpp"

namespace s4d {

// Five-level fixed-weight feature extractor standing in for a pretrained
// encoder: 3x3 conv + ReLU per level, 2x average pooling between levels.
// Weights are drawn once from seed 42 and frozen; every loss downstream is
// defined over generic feature maps, so real encoder features can be
// substituted through the external-pyramid path below.
constexpr int kPyrLevels = 5;
constexpr int kPyrChannels[kPyrLevels] = {8, 16, 32, 64, 64};

struct FeaturePyramid {
    std::array<Image, kPyrLevels> levels;
};

struct PyramidD {
    std::array<MapD, kPyrLevels> levels;
};

struct ExtractorWeights {
    // weights[l]: [cout][cin][ky][kx], biases[l]: [cout]
    std::array<std::vector<float>, kPyrLevels> weights;
    std::array<std::vector<float>, kPyrLevels> biases;

    static const ExtractorWeights& get() {
        static const ExtractorWeights w = build(42);
        return w;
    }

    static ExtractorWeights build(std::uint64_t seed) {
        ExtractorWeights ew;
        Rng rng(seed, 17);
        // Gain above the classic relu value: stand-in feature magnitudes
        // grow with depth the way pretrained encoder activations do, which
        // keeps the statistic-matching terms dominant over the
        // scale-invariant cosine terms.
        const double gain = 2.6;
        for (int l = 0; l < kPyrLevels; ++l) {
            int cin = l == 0 ? 3 : kPyrChannels[l - 1];
            int cout = kPyrChannels[l];
            double bound = gain * std::sqrt(3.0 / (9.0 * cin));
            ew.weights[l].resize(std::size_t(cout) * cin * 9);
            for (float& v : ew.weights[l]) v = float(rng.uniform(-bound, bound));
            ew.biases[l].resize(cout);
            for (float& v : ew.biases[l]) v = float(rng.uniform(-0.05, 0.05));
        }
        return ew;
    }
};

namespace detail {

// 3x3 same-padding convolution; accumulation in double, storage in T.
// Loop order is fixed, so outputs are identical for any thread count.
template <typename T>
void conv3x3(const T* in, int h, int w, int cin, const float* wt, const float* bias, int cout,
             T* out, bool relu, T* pre = nullptr) {
    parallel_for(std::size_t(cout), [&](std::size_t co) {
        const float* wc = wt + co * std::size_t(cin) * 9;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = bias[co];
                for (int ci = 0; ci < cin; ++ci) {
                    const T* plane = in + std::size_t(ci) * h * w;
                    const float* k = wc + std::size_t(ci) * 9;
                    for (int dy = -1; dy <= 1; ++dy) {
                        int yy = y + dy;
                        if (yy < 0 || yy >= h) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            int xx = x + dx;
                            if (xx < 0 || xx >= w) continue;
                            acc += double(k[(dy + 1) * 3 + (dx + 1)]) * double(plane[yy * std::size_t(w) + xx]);
                        }
                    }
                }
                std::size_t idx = (co * h + y) * std::size_t(w) + x;
                if (pre) pre[idx] = T(acc);
                out[idx] = T(relu && acc < 0 ? 0.0 : acc);
            }
    });
}

template <typename T>
void avgpool2(const T* in, int h, int w, int c, T* out) {
    int oh = h / 2, ow = w / 2;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const T* p = in + (std::size_t(ch) * h + 2 * y) * w + 2 * x;
                double acc = double(p[0]) + double(p[1]) + double(p[w]) + double(p[w + 1]);
                out[(std::size_t(ch) * oh + y) * ow + x] = T(acc * 0.25);
            }
}

inline void check_extract_dims(int h, int w) {
    require(h >= 16 && w >= 16 && h % 16 == 0 && w % 16 == 0,
            "extract: image dimensions must be >= 16 and multiples of 16");
}

} // namespace detail

inline FeaturePyramid extract(const Image& img) {
    require(img.c == 3, "extract: expected an RGB image");
    detail::check_extract_dims(img.h, img.w);
    const ExtractorWeights& ew = ExtractorWeights::get();
    FeaturePyramid pyr;
    Image cur = img;
    for (int l = 0; l < kPyrLevels; ++l) {
        Image src;
        if (l == 0) {
            src = cur;
        } else {
            src = Image(cur.h / 2, cur.w / 2, cur.c);
            detail::avgpool2(cur.v.data(), cur.h, cur.w, cur.c, src.v.data());
        }
        Image dst(src.h, src.w, kPyrChannels[l]);
        detail::conv3x3(src.v.data(), src.h, src.w, src.c, ew.weights[l].data(),
                        ew.biases[l].data(), kPyrChannels[l], dst.v.data(), true);
        pyr.levels[l] = dst;
        cur = dst;
    }
    return pyr;
}

// ---------------------------------------------------------------- double path

// Forward trace of the same cascade in double precision; the stylizer's
// pixel gradients flow through this.
struct PyrTrace {
    MapD input;
    std::array<MapD, kPyrLevels> pre;    // pre-activation conv outputs
    std::array<MapD, kPyrLevels> act;    // levels (post-relu)
    std::array<MapD, kPyrLevels> pooled; // conv inputs (pooled[0] = input)
};

inline PyrTrace pyramid_forward_d(const MapD& img) {
    require(img.c == 3, "pyramid: expected an RGB map");
    detail::check_extract_dims(img.h, img.w);
    const ExtractorWeights& ew = ExtractorWeights::get();
    PyrTrace tr;
    tr.input = img;
    MapD cur = img;
    for (int l = 0; l < kPyrLevels; ++l) {
        if (l == 0) {
            tr.pooled[l] = cur;
        } else {
            tr.pooled[l] = MapD(cur.h / 2, cur.w / 2, cur.c);
            detail::avgpool2(cur.v.data(), cur.h, cur.w, cur.c, tr.pooled[l].v.data());
        }
        const MapD& src = tr.pooled[l];
        tr.pre[l] = MapD(src.h, src.w, kPyrChannels[l]);
        tr.act[l] = MapD(src.h, src.w, kPyrChannels[l]);
        detail::conv3x3(src.v.data(), src.h, src.w, src.c, ew.weights[l].data(),
                        ew.biases[l].data(), kPyrChannels[l], tr.act[l].v.data(), true,
                        tr.pre[l].v.data());
        cur = tr.act[l];
    }
    return tr;
}

// Backward through the cascade: dact[l] = dL/d(level l), returns dL/d(input).
inline MapD pyramid_backward_d(const PyrTrace& tr, const std::array<MapD, kPyrLevels>& dact) {
    const ExtractorWeights& ew = ExtractorWeights::get();
    MapD dcur; // gradient w.r.t. act[l] accumulated from above
    for (int l = kPyrLevels - 1; l >= 0; --l) {
        const MapD& act_grad_in = dact[l];
        MapD dlevel = dcur.v.empty() ? MapD(tr.act[l].h, tr.act[l].w, tr.act[l].c) : std::move(dcur);
        if (!act_grad_in.v.empty()) {
            require(act_grad_in.same_shape(tr.act[l]), "pyramid_backward: level grad shape mismatch");
            for (std::size_t i = 0; i < dlevel.v.size(); ++i) dlevel.v[i] += act_grad_in.v[i];
        }
        // ReLU mask.
        for (std::size_t i = 0; i < dlevel.v.size(); ++i)
            if (tr.pre[l].v[i] <= 0) dlevel.v[i] = 0;
        // Conv transpose into the conv input.
        const MapD& src = tr.pooled[l];
        MapD dsrc(src.h, src.w, src.c);
        int h = src.h, w = src.w, cin = src.c, cout = kPyrChannels[l];
        parallel_for(std::size_t(cin), [&](std::size_t ci) {
            for (int co = 0; co < cout; ++co) {
                const float* k = ew.weights[l].data() + (std::size_t(co) * cin + ci) * 9;
                const double* dout = dlevel.v.data() + std::size_t(co) * h * w;
                double* din = dsrc.v.data() + ci * std::size_t(h) * w;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double g = dout[y * std::size_t(w) + x];
                        if (g == 0) continue;
                        for (int dy = -1; dy <= 1; ++dy) {
                            int yy = y + dy;
                            if (yy < 0 || yy >= h) continue;
                            for (int dx = -1; dx <= 1; ++dx) {
                                int xx = x + dx;
                                if (xx < 0 || xx >= w) continue;
                                din[yy * std::size_t(w) + xx] += g * double(k[(dy + 1) * 3 + (dx + 1)]);
                            }
                        }
                    }
            }
        });
        if (l == 0) return dsrc;
        // Average-pool backward into the previous level's activations.
        const MapD& prev = tr.act[l - 1];
        dcur = MapD(prev.h, prev.w, prev.c);
        for (int ch = 0; ch < prev.c; ++ch)
            for (int y = 0; y < dsrc.h; ++y)
                for (int x = 0; x < dsrc.w; ++x) {
                    double g = 0.25 * dsrc.at(ch, y, x);
                    dcur.at(ch, 2 * y, 2 * x) += g;
                    dcur.at(ch, 2 * y, 2 * x + 1) += g;
                    dcur.at(ch, 2 * y + 1, 2 * x) += g;
                    dcur.at(ch, 2 * y + 1, 2 * x + 1) += g;
                }
    }
    return {};
}

// ---------------------------------------------------------------- attention

// Parameter-free saliency gating: channel gate from z-scored per-channel
// (spatial mean + max), spatial gate from z-scored per-position cross-channel
// (mean + max); output = input * channel_gate * spatial_gate. Zero-variance
// score vectors z-score to zero, so constant maps gate at sigmoid(0) = 0.5.
struct AttendTrace {
    MapD in;
    std::vector<double> tc, zc, gc;
    std::vector<int> amax_c; // spatial argmax per channel
    std::vector<double> tp, zp, gp;
    std::vector<int> amax_p; // channel argmax per position
    double sd_c = 0, sd_p = 0;
};

namespace detail {

inline void zscore(const std::vector<double>& t, std::vector<double>& z, double& sd_out) {
    double mu = 0;
    for (double v : t) mu += v;
    mu /= double(t.size());
    double var = 0;
    for (double v : t) var += (v - mu) * (v - mu);
    double sd = std::sqrt(var / double(t.size()));
    z.resize(t.size());
    if (sd < 1e-12) {
        std::fill(z.begin(), z.end(), 0.0);
        sd_out = 0;
        return;
    }
    for (std::size_t i = 0; i < t.size(); ++i) z[i] = (t[i] - mu) / sd;
    sd_out = sd;
}

} // namespace detail

inline MapD attend_d(const MapD& x, AttendTrace* trace = nullptr) {
    require(x.h > 0 && x.w > 0 && x.c > 0, "attend: empty map");
    const std::size_t n = std::size_t(x.h) * x.w;
    AttendTrace tr;
    tr.in = x;

    tr.tc.resize(x.c);
    tr.amax_c.resize(x.c);
    for (int ch = 0; ch < x.c; ++ch) {
        const double* p = x.v.data() + std::size_t(ch) * n;
        double acc = 0, mx = p[0];
        int am = 0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += p[i];
            if (p[i] > mx) { mx = p[i]; am = int(i); }
        }
        tr.tc[ch] = acc / double(n) + mx;
        tr.amax_c[ch] = am;
    }
    detail::zscore(tr.tc, tr.zc, tr.sd_c);
    tr.gc.resize(x.c);
    for (int ch = 0; ch < x.c; ++ch) tr.gc[ch] = sigmoid(tr.zc[ch]);

    tr.tp.resize(n);
    tr.amax_p.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0, mx = x.v[i];
        int am = 0;
        for (int ch = 0; ch < x.c; ++ch) {
            double v = x.v[std::size_t(ch) * n + i];
            acc += v;
            if (v > mx) { mx = v; am = ch; }
        }
        tr.tp[i] = acc / double(x.c) + mx;
        tr.amax_p[i] = am;
    }
    detail::zscore(tr.tp, tr.zp, tr.sd_p);
    tr.gp.resize(n);
    for (std::size_t i = 0; i < n; ++i) tr.gp[i] = sigmoid(tr.zp[i]);

    MapD out(x.h, x.w, x.c);
    for (int ch = 0; ch < x.c; ++ch)
        for (std::size_t i = 0; i < n; ++i)
            out.v[std::size_t(ch) * n + i] = x.v[std::size_t(ch) * n + i] * tr.gc[ch] * tr.gp[i];
    if (trace) *trace = std::move(tr);
    return out;
}

inline Image attend(const Image& level) { return to_image(attend_d(to_mapd(level))); }

// Adjoint of attend_d. Accumulates into dx.
inline void attend_backward_d(const AttendTrace& tr, const MapD& dout, MapD& dx) {
    const MapD& x = tr.in;
    const std::size_t n = std::size_t(x.h) * x.w;
    require(dout.same_shape(x), "attend_backward: shape mismatch");
    if (dx.v.empty()) dx = MapD(x.h, x.w, x.c);

    std::vector<double> dgc(x.c, 0.0), dgp(n, 0.0);
    for (int ch = 0; ch < x.c; ++ch)
        for (std::size_t i = 0; i < n; ++i) {
            double g = dout.v[std::size_t(ch) * n + i];
            if (g == 0) continue;
            double xv = x.v[std::size_t(ch) * n + i];
            dx.v[std::size_t(ch) * n + i] += g * tr.gc[ch] * tr.gp[i];
            dgc[ch] += g * xv * tr.gp[i];
            dgp[i] += g * xv * tr.gc[ch];
        }

    // Through sigmoid and z-score for the channel path.
    auto zscore_back = [](const std::vector<double>& z, double sd, std::vector<double>& dz) {
        if (sd == 0) {
            std::fill(dz.begin(), dz.end(), 0.0);
            return;
        }
        double m_dz = 0, m_dzz = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            m_dz += dz[i];
            m_dzz += dz[i] * z[i];
        }
        m_dz /= double(z.size());
        m_dzz /= double(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) dz[i] = (dz[i] - m_dz - z[i] * m_dzz) / sd;
    };

    std::vector<double> dtc(x.c);
    for (int ch = 0; ch < x.c; ++ch) dtc[ch] = dgc[ch] * tr.gc[ch] * (1.0 - tr.gc[ch]);
    zscore_back(tr.zc, tr.sd_c, dtc); // dtc now holds dL/dtc
    for (int ch = 0; ch < x.c; ++ch) {
        double g = dtc[ch];
        if (g == 0) continue;
        double spread = g / double(n);
        double* dp = dx.v.data() + std::size_t(ch) * n;
        for (std::size_t i = 0; i < n; ++i) dp[i] += spread;
        dp[tr.amax_c[ch]] += g;
    }

    std::vector<double> dtp(n);
    for (std::size_t i = 0; i < n; ++i) dtp[i] = dgp[i] * tr.gp[i] * (1.0 - tr.gp[i]);
    zscore_back(tr.zp, tr.sd_p, dtp);
    for (std::size_t i = 0; i < n; ++i) {
        double g = dtp[i];
        if (g == 0) continue;
        double spread = g / double(x.c);
        for (int ch = 0; ch < x.c; ++ch) dx.v[std::size_t(ch) * n + i] += spread;
        dx.v[std::size_t(tr.amax_p[i]) * n + i] += g;
    }
}

// ---------------------------------------------------------------- external

// Loads a pre-computed pyramid from a directory of level1.imgf32..level5.imgf32,
// the substitution path for real encoder features.
inline FeaturePyramid load_external_pyramid(const std::string& dir) {
    FeaturePyramid pyr;
    for (int l = 0; l < kPyrLevels; ++l) {
        std::string path = dir + "/level" + std::to_string(l + 1) + ".imgf32";
        pyr.levels[l] = load_imgf32(path);
        require(pyr.levels[l].finite(), "external pyramid level has non-finite values: " + path);
    }
    for (int l = 1; l < kPyrLevels; ++l)
        require(pyr.levels[l].h * 2 == pyr.levels[l - 1].h && pyr.levels[l].w * 2 == pyr.levels[l - 1].w,
                "external pyramid levels must halve in size: " + dir);
    return pyr;
}

inline PyramidD to_pyramid_d(const FeaturePyramid& pyr) {
    PyramidD out;
    for (int l = 0; l < kPyrLevels; ++l) out.levels[l] = to_mapd(pyr.levels[l]);
    return out;
}

} // namespace s4d
