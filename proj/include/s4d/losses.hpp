// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "s4d/core.hpp"
#include "s4d/featuremap.hpp"
#include "s4d/pyramid.hpp"
#include "s4d/rng.hpp"

namespace s4d {

struct LossWeights {
    double consistency = 3.0;
    double style = 18.0;
    double id = 7.0;
    double illum = 1e-5;
    double ins = 1.0;
    double tau = 0.07;
    int n_samples = 64;
    double illum_sigma = 0.01;
};

inline void validate(const LossWeights& w) {
    require(w.consistency >= 0 && w.style >= 0 && w.id >= 0 && w.illum >= 0 && w.ins >= 0,
            "loss weights must be non-negative");
    require(w.tau > 0, "tau must be positive");
    require(w.n_samples >= 1, "n_samples must be >= 1");
}

// ---------------------------------------------------------------- style

// Sum over levels of squared channel-statistic differences:
// sum_l ( |mu_l(cs)-mu_l(s)|^2 + |sigma_l(cs)-sigma_l(s)|^2 ).
// With `grad` non-null, accumulates d/d(cs level maps).
inline double style_loss(const PyramidD& cs, const PyramidD& st,
                         std::array<MapD, kPyrLevels>* grad = nullptr) {
    double total = 0;
    for (int l = 0; l < kPyrLevels; ++l) {
        const MapD& a = cs.levels[l];
        const MapD& b = st.levels[l];
        require(a.c == b.c, "style_loss: channel count mismatch at level " + std::to_string(l));
        FeatureStats sa = stats(a), sb = stats(b);
        const std::size_t n = std::size_t(a.h) * a.w;
        for (int ch = 0; ch < a.c; ++ch) {
            double dmu = sa.mean[ch] - sb.mean[ch];
            double dsd = sa.std[ch] - sb.std[ch];
            total += dmu * dmu + dsd * dsd;
            if (grad) {
                MapD& g = (*grad)[l];
                if (g.v.empty()) g = MapD(a.h, a.w, a.c);
                double* gp = g.v.data() + std::size_t(ch) * n;
                const double* ap = a.v.data() + std::size_t(ch) * n;
                double coef_mu = 2.0 * dmu / double(n);
                // d sigma / d x_i = (x_i - mu) / (n * sigma); zero-variance
                // channels contribute no sigma gradient.
                double coef_sd = sa.std[ch] > 1e-12 ? 2.0 * dsd / (double(n) * sa.std[ch]) : 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    gp[i] += coef_mu + coef_sd * (ap[i] - sa.mean[ch]);
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------- identity

// Mean-squared error, per-element mean.
inline double mse_mean(const MapD& a, const MapD& b, MapD* grad_a = nullptr, double weight = 1.0) {
    require(a.same_shape(b), "mse: shape mismatch");
    double acc = 0;
    const double inv_n = 1.0 / double(a.size());
    if (grad_a && grad_a->v.empty()) *grad_a = MapD(a.h, a.w, a.c);
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.v[i] - b.v[i];
        acc += d * d;
        if (grad_a) grad_a->v[i] += weight * 2.0 * d * inv_n;
    }
    return acc * inv_n;
}

inline double identity_loss(const MapD& i_cc, const MapD& i_c, const MapD& i_ss, const MapD& i_s) {
    return mse_mean(i_cc, i_c) + mse_mean(i_ss, i_s);
}

// ---------------------------------------------------------------- illumination

// || G(I_c, I_s) - G(I_c + eps, I_s) ||^2 with eps ~ N(0, sigma^2 I), seeded.
inline double illumination_loss(const std::function<MapD(const MapD&, const MapD&)>& stylize_fn,
                                const MapD& i_c, const MapD& i_s, double sigma, std::uint64_t seed) {
    if (sigma == 0) return 0.0;
    MapD noisy = i_c;
    Rng rng(seed, 29);
    for (double& v : noisy.v) v += sigma * rng.normal();
    MapD a = stylize_fn(i_c, i_s);
    MapD b = stylize_fn(noisy, i_s);
    return mse_mean(a, b);
}

// ---------------------------------------------------------------- inner channel

// Treats each spatial position's cross-channel vector as a feature; the
// channel sum collapses to C * min over anchors of sum_j (1 - cos(v_i, v_j)),
// normalized by h*w. Near-zero vectors contribute a constant term of 1.
inline double inner_channel_loss(const MapD& m, MapD* grad = nullptr) {
    require(m.h > 0 && m.w > 0 && m.c > 0, "inner_channel_loss: empty map");
    const std::size_t n = std::size_t(m.h) * m.w;
    const int C = m.c;
    constexpr double kZeroNorm = 1e-12;

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (int ch = 0; ch < C; ++ch) {
            double v = m.v[std::size_t(ch) * n + i];
            acc += v * v;
        }
        norms[i] = std::sqrt(acc);
    }
    auto vec_dot = [&](std::size_t i, std::size_t j) {
        double acc = 0;
        for (int ch = 0; ch < C; ++ch)
            acc += m.v[std::size_t(ch) * n + i] * m.v[std::size_t(ch) * n + j];
        return acc;
    };

    double best = 0;
    std::size_t best_i = 0;
    bool first = true;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) {
            double cosv = 0;
            if (norms[i] > kZeroNorm && norms[j] > kZeroNorm)
                cosv = vec_dot(i, j) / (norms[i] * norms[j]);
            s += 1.0 - cosv;
        }
        if (first || s < best) {
            best = s;
            best_i = i;
            first = false;
        }
    }
    double scale = double(C) / double(n);
    if (grad) {
        if (grad->v.empty()) *grad = MapD(m.h, m.w, m.c);
        // Subgradient through the argmin anchor i*.
        std::size_t i = best_i;
        if (norms[i] > kZeroNorm) {
            for (std::size_t j = 0; j < n; ++j) {
                if (norms[j] <= kZeroNorm) continue;
                double dij = vec_dot(i, j);
                double inv = 1.0 / (norms[i] * norms[j]);
                double cosv = dij * inv;
                // d(1 - cos)/d v_i and /d v_j
                for (int ch = 0; ch < C; ++ch) {
                    double vi = m.v[std::size_t(ch) * n + i];
                    double vj = m.v[std::size_t(ch) * n + j];
                    double d_vi = -(vj * inv - cosv * vi / (norms[i] * norms[i]));
                    double d_vj = -(vi * inv - cosv * vj / (norms[j] * norms[j]));
                    grad->v[std::size_t(ch) * n + i] += scale * d_vi;
                    grad->v[std::size_t(ch) * n + j] += scale * d_vj;
                }
            }
        }
    }
    return best * scale;
}

// ---------------------------------------------------------------- local diffs

// N anchors away from borders plus 8 jittered neighbors each; aligned raw
// difference vectors from both maps. Normalization happens inside
// local_contrastive_loss, which is where the unit-vector fallback lives.
struct LocalDifferenceSet {
    int h = 0, w = 0, c = 0;
    int n_anchors = 0;
    std::vector<int> anchor_pos;   // n_anchors, flattened y*w+x
    std::vector<int> neighbor_pos; // 8*n_anchors
    std::vector<double> diffs_g, diffs_c; // (8N) x C, raw differences
};

constexpr int kLdsMargin = 2; // neighbor offset 1 + jitter 1

inline LocalDifferenceSet sample_local_differences(const MapD& map_g, const MapD& map_c, int n,
                                                   std::uint64_t seed) {
    require(map_g.same_shape(map_c), "sample_local_differences: map shapes differ");
    require(n >= 1, "sample_local_differences: need n >= 1");
    require(map_g.h >= 2 * kLdsMargin + 1 && map_g.w >= 2 * kLdsMargin + 1,
            "sample_local_differences: map too small for the sampling margin");

    LocalDifferenceSet set;
    set.h = map_g.h;
    set.w = map_g.w;
    set.c = map_g.c;
    set.n_anchors = n;
    Rng rng(seed, 31);
    const int W = map_g.w;
    const std::size_t plane = std::size_t(map_g.h) * map_g.w;

    const int offs[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
    set.anchor_pos.reserve(n);
    set.neighbor_pos.reserve(8 * n);
    for (int a = 0; a < n; ++a) {
        int ay = kLdsMargin + int(rng.below(std::uint32_t(map_g.h - 2 * kLdsMargin)));
        int ax = kLdsMargin + int(rng.below(std::uint32_t(map_g.w - 2 * kLdsMargin)));
        set.anchor_pos.push_back(ay * W + ax);
        for (const auto& o : offs) {
            int jy = int(rng.below(3)) - 1;
            int jx = int(rng.below(3)) - 1;
            int ny = ay + o[0] + jy;
            int nx = ax + o[1] + jx;
            set.neighbor_pos.push_back(ny * W + nx);
        }
    }

    const int M = 8 * n;
    set.diffs_g.assign(std::size_t(M) * set.c, 0.0);
    set.diffs_c.assign(std::size_t(M) * set.c, 0.0);
    auto fill = [&](const MapD& src, std::vector<double>& dst) {
        for (int m = 0; m < M; ++m) {
            int ap = set.anchor_pos[m / 8];
            int np = set.neighbor_pos[m];
            for (int ch = 0; ch < set.c; ++ch)
                dst[std::size_t(m) * set.c + ch] =
                    src.v[std::size_t(ch) * plane + ap] - src.v[std::size_t(ch) * plane + np];
        }
    };
    fill(map_g, set.diffs_g);
    fill(map_c, set.diffs_c);
    return set;
}

// InfoNCE over aligned difference pairs, mean over the terms. Differences are
// L2-normalized here; zero-norm differences take the frozen unit fallback e1
// and carry no gradient. With `grad_g` non-null, accumulates d/d(map_g).
inline double local_contrastive_loss(const LocalDifferenceSet& set, double tau,
                                     MapD* grad_g = nullptr) {
    const int C = set.c;
    const int M = C > 0 ? int(set.diffs_g.size() / std::size_t(C)) : 0;
    require(M >= 1 && set.diffs_c.size() == set.diffs_g.size(),
            "local_contrastive_loss: empty or mismatched set");
    require(tau > 0, "local_contrastive_loss: tau must be positive");

    auto normalize = [C](const std::vector<double>& raw, std::vector<double>& unit,
                         std::vector<double>& norms) {
        int count = int(raw.size() / std::size_t(C));
        unit.resize(raw.size());
        norms.assign(count, 0.0);
        for (int m = 0; m < count; ++m) {
            double n2 = 0;
            for (int ch = 0; ch < C; ++ch) {
                double d = raw[std::size_t(m) * C + ch];
                n2 += d * d;
            }
            double nn = std::sqrt(n2);
            if (nn > 1e-12) {
                for (int ch = 0; ch < C; ++ch) unit[std::size_t(m) * C + ch] = raw[std::size_t(m) * C + ch] / nn;
                norms[m] = nn;
            } else {
                for (int ch = 0; ch < C; ++ch) unit[std::size_t(m) * C + ch] = ch == 0 ? 1.0 : 0.0;
            }
        }
    };
    std::vector<double> ghat, chat, norm_g, norm_c;
    normalize(set.diffs_g, ghat, norm_g);
    normalize(set.diffs_c, chat, norm_c);

    // Similarity matrix s[m][n] = ghat_m . chat_n.
    std::vector<double> sim(std::size_t(M) * M);
    parallel_for(std::size_t(M), [&](std::size_t m) {
        const double* gm = ghat.data() + m * C;
        for (int n2 = 0; n2 < M; ++n2) {
            const double* cn = chat.data() + std::size_t(n2) * C;
            double acc = 0;
            for (int ch = 0; ch < C; ++ch) acc += gm[ch] * cn[ch];
            sim[m * M + n2] = acc;
        }
    });

    double total = 0;
    std::vector<double> dsim;
    if (grad_g) dsim.assign(std::size_t(M) * M, 0.0);
    for (int m = 0; m < M; ++m) {
        const double* row = sim.data() + std::size_t(m) * M;
        double mx = row[0];
        for (int n2 = 1; n2 < M; ++n2) mx = std::max(mx, row[n2]);
        double lse = 0;
        for (int n2 = 0; n2 < M; ++n2) lse += std::exp((row[n2] - mx) / tau);
        double log_denom = mx / tau + std::log(lse);
        total += -row[m] / tau + log_denom;
        if (grad_g) {
            for (int n2 = 0; n2 < M; ++n2) {
                double p = std::exp((row[n2] - mx) / tau) / lse;
                dsim[std::size_t(m) * M + n2] = (p - (n2 == m ? 1.0 : 0.0)) / (tau * M);
            }
        }
    }
    total /= double(M);

    if (grad_g) {
        if (grad_g->v.empty()) *grad_g = MapD(set.h, set.w, set.c);
        const std::size_t plane = std::size_t(set.h) * set.w;
        for (int m = 0; m < M; ++m) {
            if (norm_g[m] == 0.0) continue; // fallback vector: no gradient
            // dL/d ghat_m = sum_n dsim[m][n] * chat_n
            std::vector<double> dghat(C, 0.0);
            for (int n2 = 0; n2 < M; ++n2) {
                double wgt = dsim[std::size_t(m) * M + n2];
                if (wgt == 0) continue;
                const double* cn = chat.data() + std::size_t(n2) * C;
                for (int ch = 0; ch < C; ++ch) dghat[ch] += wgt * cn[ch];
            }
            // Through normalization: d raw = (I - ghat ghat^T) / |raw| * dghat.
            const double* gm = ghat.data() + std::size_t(m) * C;
            double proj = 0;
            for (int ch = 0; ch < C; ++ch) proj += dghat[ch] * gm[ch];
            int ap = set.anchor_pos[m / 8];
            int np = set.neighbor_pos[m];
            for (int ch = 0; ch < C; ++ch) {
                double draw = (dghat[ch] - proj * gm[ch]) / norm_g[m];
                grad_g->v[std::size_t(ch) * plane + ap] += draw;
                grad_g->v[std::size_t(ch) * plane + np] -= draw;
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------- content

// Per-element mean squared difference, averaged over the provided levels.
inline double content_loss(const std::vector<MapD>& f_cs, const std::vector<MapD>& f_c,
                           std::vector<MapD>* grad = nullptr) {
    require(!f_cs.empty() && f_cs.size() == f_c.size(), "content_loss: level lists differ");
    double total = 0;
    double wl = 1.0 / double(f_cs.size());
    if (grad) grad->resize(f_cs.size());
    for (std::size_t l = 0; l < f_cs.size(); ++l)
        total += wl * mse_mean(f_cs[l], f_c[l], grad ? &(*grad)[l] : nullptr, wl);
    return total;
}

// L_lcl + L_content over the attended levels. Levels too small for the
// sampling margin are skipped by the contrastive term (the content term
// still sees them); `seed` parameterizes the per-level sampling.
struct ConsistencyResult {
    double total = 0, lcl = 0, content = 0;
};

inline ConsistencyResult consistency_loss(const std::vector<MapD>& att_cs,
                                          const std::vector<MapD>& att_c, int n_samples,
                                          double tau, std::uint64_t seed,
                                          std::vector<MapD>* grad = nullptr) {
    require(att_cs.size() == att_c.size() && !att_cs.empty(),
            "consistency_loss: level lists differ");
    ConsistencyResult r;
    if (grad) grad->resize(att_cs.size());
    int used = 0;
    for (std::size_t l = 0; l < att_cs.size(); ++l)
        if (att_cs[l].h >= 2 * kLdsMargin + 1 && att_cs[l].w >= 2 * kLdsMargin + 1) ++used;
    double acc = 0;
    for (std::size_t l = 0; l < att_cs.size(); ++l) {
        if (att_cs[l].h < 2 * kLdsMargin + 1 || att_cs[l].w < 2 * kLdsMargin + 1) continue;
        LocalDifferenceSet set =
            sample_local_differences(att_cs[l], att_c[l], n_samples, derive_seed(seed, l));
        MapD* g = grad ? &(*grad)[l] : nullptr;
        MapD local;
        double v = local_contrastive_loss(set, tau, g ? &local : nullptr);
        if (g) {
            if (g->v.empty()) *g = MapD(att_cs[l].h, att_cs[l].w, att_cs[l].c);
            double wl = 1.0 / double(used);
            for (std::size_t i = 0; i < local.v.size(); ++i) g->v[i] += wl * local.v[i];
        }
        acc += v;
    }
    r.lcl = used > 0 ? acc / double(used) : 0.0;
    r.content = content_loss(att_cs, att_c, grad ? grad : nullptr);
    r.total = r.lcl + r.content;
    return r;
}

// ---------------------------------------------------------------- tv / recon

// Anisotropic total variation: mean of |horizontal diff| + |vertical diff|
// over all valid difference positions and channels.
inline double tv_loss(const MapD& img, MapD* grad = nullptr) {
    require(img.h >= 2 && img.w >= 2, "tv_loss: image must be at least 2x2");
    const std::size_t n_terms =
        std::size_t(img.c) * (std::size_t(img.h) * (img.w - 1) + std::size_t(img.h - 1) * img.w);
    double acc = 0;
    const double inv = 1.0 / double(n_terms);
    if (grad && grad->v.empty()) *grad = MapD(img.h, img.w, img.c);
    for (int ch = 0; ch < img.c; ++ch) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x + 1 < img.w; ++x) {
                double d = img.at(ch, y, x + 1) - img.at(ch, y, x);
                acc += std::abs(d);
                if (grad && d != 0) {
                    double s = (d > 0 ? 1.0 : -1.0) * inv;
                    grad->at(ch, y, x + 1) += s;
                    grad->at(ch, y, x) -= s;
                }
            }
        for (int y = 0; y + 1 < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double d = img.at(ch, y + 1, x) - img.at(ch, y, x);
                acc += std::abs(d);
                if (grad && d != 0) {
                    double s = (d > 0 ? 1.0 : -1.0) * inv;
                    grad->at(ch, y + 1, x) += s;
                    grad->at(ch, y, x) -= s;
                }
            }
    }
    return acc * inv;
}

inline double tv_loss(const Image& img) { return tv_loss(to_mapd(img)); }

// Mean absolute error plus total variation of the render.
inline double reconstruction_loss(const MapD& render, const MapD& target, MapD* grad = nullptr,
                                  double* l1_out = nullptr) {
    require(render.same_shape(target), "reconstruction_loss: shape mismatch");
    double l1 = 0;
    const double inv = 1.0 / double(render.size());
    if (grad && grad->v.empty()) *grad = MapD(render.h, render.w, render.c);
    for (std::size_t i = 0; i < render.size(); ++i) {
        double d = render.v[i] - target.v[i];
        l1 += std::abs(d);
        if (grad && d != 0) grad->v[i] += (d > 0 ? 1.0 : -1.0) * inv;
    }
    l1 *= inv;
    if (l1_out) *l1_out = l1;
    return l1 + tv_loss(render, grad);
}

inline double reconstruction_loss(const Image& render, const Image& target) {
    return reconstruction_loss(to_mapd(render), to_mapd(target));
}

// ---------------------------------------------------------------- gram

// G_ij = 1/(C*H*W) sum_{k,l} F_ik_l F_jk_l, returned row-major C x C.
inline std::vector<double> gram(const MapD& m) {
    require(m.h > 0 && m.w > 0 && m.c > 0, "gram: empty map");
    const std::size_t n = std::size_t(m.h) * m.w;
    const int C = m.c;
    std::vector<double> g(std::size_t(C) * C, 0.0);
    const double inv = 1.0 / (double(C) * double(n));
    for (int i = 0; i < C; ++i) {
        const double* pi = m.v.data() + std::size_t(i) * n;
        for (int j = i; j < C; ++j) {
            const double* pj = m.v.data() + std::size_t(j) * n;
            double acc = 0;
            for (std::size_t k = 0; k < n; ++k) acc += pi[k] * pj[k];
            acc *= inv;
            g[std::size_t(i) * C + j] = acc;
            g[std::size_t(j) * C + i] = acc;
        }
    }
    return g;
}

inline std::vector<double> gram(const Image& img) { return gram(to_mapd(img)); }

// Sum over levels of the MSE between Gram matrices.
inline double gram_style_distance(const PyramidD& a, const PyramidD& b) {
    double total = 0;
    for (int l = 0; l < kPyrLevels; ++l) {
        require(a.levels[l].c == b.levels[l].c,
                "gram_style_distance: channel mismatch at level " + std::to_string(l));
        std::vector<double> ga = gram(a.levels[l]);
        std::vector<double> gb = gram(b.levels[l]);
        double acc = 0;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            double d = ga[i] - gb[i];
            acc += d * d;
        }
        total += acc / double(ga.size());
    }
    return total;
}

inline double gram_style_distance(const FeaturePyramid& a, const FeaturePyramid& b) {
    return gram_style_distance(to_pyramid_d(a), to_pyramid_d(b));
}

// ---------------------------------------------------------------- total

struct HgstComponents {
    double consistency = 0; // lcl + content
    double lcl = 0;
    double content = 0;
    double style = 0;
    double id = 0;
    double illum = 0;
    double ins = 0;
};

struct HgstTotal {
    double total = 0;
    HgstComponents components;
};

inline HgstTotal total_hgst_loss(const HgstComponents& c, const LossWeights& w) {
    HgstTotal out;
    out.components = c;
    out.total = w.consistency * c.consistency + w.style * c.style + w.id * c.id +
                w.illum * c.illum + w.ins * c.ins;
    return out;
}

} // namespace s4d
