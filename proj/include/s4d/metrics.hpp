// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s4d/core.hpp"
#include "s4d/flow.hpp"
#include "s4d/image.hpp"
#include "s4d/losses.hpp"
#include "s4d/pyramid.hpp"

namespace s4d {

// ---------------------------------------------------------------- ssim

// Standard SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, unit
// dynamic range, averaged over valid window positions and channels.
inline double ssim(const Image& a, const Image& b) {
    require(a.same_shape(b), "ssim: shape mismatch");
    require(a.h >= 11 && a.w >= 11, "ssim: images must be at least 11x11");
    constexpr int R = 5;
    static const std::vector<double> win = [] {
        std::vector<double> w(11 * 11);
        double sum = 0;
        for (int y = -R; y <= R; ++y)
            for (int x = -R; x <= R; ++x) {
                double v = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
                w[(y + R) * 11 + (x + R)] = v;
                sum += v;
            }
        for (double& v : w) v /= sum;
        return w;
    }();
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    double total = 0;
    std::size_t count = 0;
    for (int ch = 0; ch < a.c; ++ch)
        for (int y = R; y < a.h - R; ++y)
            for (int x = R; x < a.w - R; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -R; dy <= R; ++dy)
                    for (int dx = -R; dx <= R; ++dx) {
                        double wgt = win[(dy + R) * 11 + (dx + R)];
                        double va = a.at(ch, y + dy, x + dx);
                        double vb = b.at(ch, y + dy, x + dx);
                        ma += wgt * va;
                        mb += wgt * vb;
                        // Grouped so ssim(a, b) == ssim(b, a) bitwise.
                        saa += wgt * (va * va);
                        sbb += wgt * (vb * vb);
                        sab += wgt * (va * vb);
                    }
                double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
                double num = (2 * ma * mb + C1) * (2 * cab + C2);
                double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
                total += num / den;
                ++count;
            }
    return total / double(count);
}

// ---------------------------------------------------------------- psnr

// -10 log10(MSE) over unit range; identical images report +infinity.
inline double psnr(const Image& a, const Image& b) {
    require(a.same_shape(b), "psnr: shape mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = double(a.v[i]) - double(b.v[i]);
        mse += d * d;
    }
    mse /= double(a.v.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

inline double mse(const Image& a, const Image& b) {
    require(a.same_shape(b), "mse: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = double(a.v[i]) - double(b.v[i]);
        acc += d * d;
    }
    return acc / double(a.v.size());
}

// ---------------------------------------------------------------- uiqm

struct UiqmResult {
    double uiqm = 0, uicm = 0, uism = 0, uiconm = 0;
};

namespace detail {

// Asymmetric alpha-trimmed statistics (10% trimmed at both tails; variance
// taken around the trimmed mean over all samples).
inline void trimmed_stats(std::vector<double>& vals, double* mean_out, double* var_out) {
    std::sort(vals.begin(), vals.end());
    std::size_t trim = std::size_t(0.1 * double(vals.size()));
    std::size_t lo = trim, hi = vals.size() - trim;
    double mu = 0;
    for (std::size_t i = lo; i < hi; ++i) mu += vals[i];
    mu /= double(hi - lo);
    double var = 0;
    for (double v : vals) var += (v - mu) * (v - mu);
    var /= double(vals.size());
    *mean_out = mu;
    *var_out = var;
}

inline double sobel_mag(const Image& img, int ch, int y, int x) {
    auto p = [&](int yy, int xx) {
        return double(img.at(ch, std::clamp(yy, 0, img.h - 1), std::clamp(xx, 0, img.w - 1)));
    };
    double gx = p(y - 1, x + 1) + 2 * p(y, x + 1) + p(y + 1, x + 1) -
                p(y - 1, x - 1) - 2 * p(y, x - 1) - p(y + 1, x - 1);
    double gy = p(y + 1, x - 1) + 2 * p(y + 1, x) + p(y + 1, x + 1) -
                p(y - 1, x - 1) - 2 * p(y - 1, x) - p(y - 1, x + 1);
    return std::sqrt(gx * gx + gy * gy);
}

// Block log-contrast (EME) with an epsilon guard so synthetic flats and
// exact zeros stay finite: 2/(k1 k2) * sum log((max+eps)/(min+eps)).
inline double eme(const std::vector<double>& plane, int h, int w, int block, double eps) {
    int k1 = h / block, k2 = w / block;
    if (k1 == 0 || k2 == 0) return 0;
    double acc = 0;
    for (int by = 0; by < k1; ++by)
        for (int bx = 0; bx < k2; ++bx) {
            double mn = plane[std::size_t(by * block) * w + bx * block], mx = mn;
            for (int y = by * block; y < (by + 1) * block; ++y)
                for (int x = bx * block; x < (bx + 1) * block; ++x) {
                    double v = plane[std::size_t(y) * w + x];
                    mn = std::min(mn, v);
                    mx = std::max(mx, v);
                }
            acc += std::log((mx + eps) / (mn + eps));
        }
    return 2.0 / double(k1 * k2) * acc;
}

} // namespace detail

// No-reference quality: colorfulness (UICM on opponent channels), sharpness
// (UISM, Sobel-weighted block log-contrast), and contrast (UIConM, entropy-
// style block contrast on intensity), combined with the standard weights.
inline UiqmResult uiqm(const Image& img) {
    require(img.c == 3, "uiqm: expected an RGB image");
    const std::size_t n = std::size_t(img.h) * img.w;
    UiqmResult res;

    // UICM
    {
        std::vector<double> rg(n), yb(n);
        for (std::size_t i = 0; i < n; ++i) {
            double r = img.v[i], g = img.v[n + i], b = img.v[2 * n + i];
            rg[i] = r - g;
            yb[i] = 0.5 * (r + g) - b;
        }
        double mu_rg, var_rg, mu_yb, var_yb;
        detail::trimmed_stats(rg, &mu_rg, &var_rg);
        detail::trimmed_stats(yb, &mu_yb, &var_yb);
        res.uicm = -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) +
                   0.1586 * std::sqrt(var_rg + var_yb);
    }

    // UISM: Sobel-weighted channels, EME over 8x8 blocks.
    {
        const double lum[3] = {0.299, 0.587, 0.114};
        double acc = 0;
        std::vector<double> edge(n);
        for (int ch = 0; ch < 3; ++ch) {
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x)
                    edge[std::size_t(y) * img.w + x] =
                        detail::sobel_mag(img, ch, y, x) * double(img.at(ch, y, x));
            acc += lum[ch] * detail::eme(edge, img.h, img.w, 8, 1e-4);
        }
        res.uism = acc;
    }

    // UIConM: entropy-style block contrast on intensity, 8x8 blocks.
    {
        std::vector<double> inten(n);
        for (std::size_t i = 0; i < n; ++i)
            inten[i] = (double(img.v[i]) + img.v[n + i] + img.v[2 * n + i]) / 3.0;
        int block = 8, k1 = img.h / block, k2 = img.w / block;
        double acc = 0;
        if (k1 > 0 && k2 > 0) {
            for (int by = 0; by < k1; ++by)
                for (int bx = 0; bx < k2; ++bx) {
                    double mn = inten[std::size_t(by * block) * img.w + bx * block], mx = mn;
                    for (int y = by * block; y < (by + 1) * block; ++y)
                        for (int x = bx * block; x < (bx + 1) * block; ++x) {
                            double v = inten[std::size_t(y) * img.w + x];
                            mn = std::min(mn, v);
                            mx = std::max(mx, v);
                        }
                    double denom = mx + mn;
                    double c = denom > 0 ? (mx - mn) / denom : 0.0;
                    if (c > 0) acc += -c * std::log(c);
                }
            acc /= double(k1 * k2);
        }
        res.uiconm = acc;
    }

    res.uiqm = 0.0282 * res.uicm + 0.2953 * res.uism + 3.5753 * res.uiconm;
    return res;
}

// ---------------------------------------------------------------- bench

struct FrameMetrics {
    std::string cam;
    int frame = 0;
    double psnr = 0, ssim = 0, mse = 0, gram_style = 0;
    UiqmResult uiqm;
    double warp = std::numeric_limits<double>::quiet_NaN(); // pair (frame-1, frame)
    std::map<std::string, std::string> external; // merged verbatim
    bool skipped = false;
    std::string skip_reason;
};

struct BenchReport {
    nlohmann::ordered_json provenance;
    std::vector<FrameMetrics> frames;
    std::map<std::string, std::pair<double, double>> aggregates; // metric -> (mean, std)
    std::vector<std::string> unavailable;
};

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void aggregate(BenchReport& rep, const std::string& name,
                      const std::vector<double>& vals) {
    if (vals.empty()) return;
    // Infinite entries (identical-image PSNR) are excluded from moments.
    std::vector<double> finite;
    for (double v : vals)
        if (std::isfinite(v)) finite.push_back(v);
    if (finite.empty()) {
        rep.aggregates[name] = {std::numeric_limits<double>::infinity(), 0.0};
        return;
    }
    double mu = 0;
    for (double v : finite) mu += v;
    mu /= double(finite.size());
    double var = 0;
    for (double v : finite) var += (v - mu) * (v - mu);
    var /= double(finite.size());
    rep.aggregates[name] = {mu, std::sqrt(var)};
}

} // namespace detail

// Pretrained-network metrics stay schema slots; values arrive only through
// the external CSV.
inline const std::vector<std::string>& external_metric_slots() {
    static const std::vector<std::string> slots = {
        "clipiqa+", "musiq", "qalign", "musiq-paq2piq", "dists", "dino", "ckdn", "lpips"};
    return slots;
}

struct EvalSpec {
    bool with_flow = true;        // spatiotemporal warp loss
    std::string external_features; // optional directory with precomputed pyramids
};

// Evaluates a run directory:
//   run/frames/<cam>/<frame>.imgf32    rendered frames
//   run/originals/<cam>/<frame>.imgf32 reference frames
//   run/style.imgf32                   style image
//   run/flows/<cam>/<frame>.flo        optional flow for pair (frame, frame+1)
//   run/external_metrics.csv           optional "cam,frame,metric,value"
inline BenchReport evaluate(const std::string& run_dir, const EvalSpec& spec = {}) {
    namespace fs = std::filesystem;
    require(fs::is_directory(run_dir), "evaluate: not a directory: " + run_dir);
    require(fs::is_directory(run_dir + "/frames"), "evaluate: missing frames/ in " + run_dir);
    require(fs::is_directory(run_dir + "/originals"), "evaluate: missing originals/ in " + run_dir);
    require(fs::exists(run_dir + "/style.imgf32"), "evaluate: missing style.imgf32 in " + run_dir);

    Image style = load_imgf32(run_dir + "/style.imgf32");
    FeaturePyramid style_pyr = extract(style);

    std::vector<std::string> cams;
    for (const auto& e : fs::directory_iterator(run_dir + "/frames"))
        if (e.is_directory()) cams.push_back(e.path().filename().string());
    std::sort(cams.begin(), cams.end());
    require(!cams.empty(), "evaluate: no camera directories under frames/");

    // External values.
    std::map<std::string, std::map<std::string, std::string>> external; // "cam/frame" -> metric -> value
    if (fs::exists(run_dir + "/external_metrics.csv")) {
        std::ifstream f(run_dir + "/external_metrics.csv");
        std::string line;
        bool header = true;
        while (std::getline(f, line)) {
            if (header) { header = false; continue; }
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string cam, frame, metric, value;
            require(std::getline(ss, cam, ',') && std::getline(ss, frame, ',') &&
                        std::getline(ss, metric, ',') && std::getline(ss, value),
                    "evaluate: malformed external_metrics.csv line: " + line);
            external[cam + "/" + frame][metric] = value;
        }
    }

    BenchReport rep;
    std::uint64_t input_hash = 0xcbf29ce484222325ull;

    std::vector<std::vector<int>> cam_frames(cams.size());
    for (std::size_t ci = 0; ci < cams.size(); ++ci) {
        std::vector<int> ids;
        for (const auto& e : fs::directory_iterator(run_dir + "/frames/" + cams[ci]))
            if (e.path().extension() == ".imgf32")
                ids.push_back(std::stoi(e.path().stem().string()));
        std::sort(ids.begin(), ids.end());
        require(!ids.empty(), "evaluate: camera " + cams[ci] + " has no frames");
        cam_frames[ci] = ids;
    }

    for (std::size_t ci = 0; ci < cams.size(); ++ci) {
        const std::string& cam = cams[ci];
        std::vector<Image> seq;
        std::vector<FlowField> flows;
        bool have_all_flows = true;
        char name[32];
        for (std::size_t k = 0; k < cam_frames[ci].size(); ++k) {
            int id = cam_frames[ci][k];
            std::snprintf(name, sizeof name, "%04d", id);
            std::string fpath = run_dir + "/frames/" + cam + "/" + name + ".imgf32";
            std::string opath = run_dir + "/originals/" + cam + "/" + name + ".imgf32";
            require(fs::exists(opath), "evaluate: missing original for " + cam + "/" + name);
            Image frame = load_imgf32(fpath);
            Image orig = load_imgf32(opath);
            require(frame.same_shape(orig),
                    "evaluate: frame/original shape mismatch at " + cam + "/" + name);
            input_hash = fnv1a64(frame.v.data(), frame.v.size() * 4, input_hash);

            FrameMetrics fm;
            fm.cam = cam;
            fm.frame = id;
            fm.psnr = psnr(frame, orig);
            fm.ssim = ssim(frame, orig);
            fm.mse = mse(frame, orig);
            fm.uiqm = uiqm(frame);
            FeaturePyramid fp = spec.external_features.empty()
                                    ? extract(frame)
                                    : load_external_pyramid(spec.external_features + "/" + cam + "/" + name);
            fm.gram_style = gram_style_distance(fp, style_pyr);
            auto ext = external.find(cam + "/" + std::to_string(id));
            if (ext != external.end()) fm.external = ext->second;

            seq.push_back(std::move(frame));
            if (spec.with_flow && k + 1 < cam_frames[ci].size()) {
                std::snprintf(name, sizeof name, "%04d", id);
                std::string flo = run_dir + "/flows/" + cam + "/" + name + ".flo";
                if (fs::exists(flo)) flows.push_back(load_flo(flo));
                else have_all_flows = false;
            }
            rep.frames.push_back(std::move(fm));
        }
        if (spec.with_flow && seq.size() >= 2) {
            // Per-pair warp errors recorded on the later frame's row.
            std::size_t base = rep.frames.size() - seq.size();
            for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
                std::vector<Image> pair{seq[t], seq[t + 1]};
                double wl;
                if (have_all_flows) {
                    std::vector<FlowField> pf{flows[t]};
                    wl = warp_loss(pair, &pf);
                } else {
                    wl = warp_loss(pair);
                }
                rep.frames[base + t + 1].warp = wl;
            }
        }
    }

    rep.provenance["run_dir"] = fs::path(run_dir).filename().string();
    rep.provenance["input_hash"] = hex64(input_hash);
    rep.provenance["tool"] = "s4d";
    rep.provenance["tool_version"] = 1;

    std::vector<double> v_psnr, v_ssim, v_mse, v_gram, v_uiqm, v_warp;
    for (const FrameMetrics& fm : rep.frames) {
        v_psnr.push_back(fm.psnr);
        v_ssim.push_back(fm.ssim);
        v_mse.push_back(fm.mse);
        v_gram.push_back(fm.gram_style);
        v_uiqm.push_back(fm.uiqm.uiqm);
        if (!std::isnan(fm.warp)) v_warp.push_back(fm.warp);
    }
    detail::aggregate(rep, "psnr", v_psnr);
    detail::aggregate(rep, "ssim", v_ssim);
    detail::aggregate(rep, "mse", v_mse);
    detail::aggregate(rep, "gram_style_distance", v_gram);
    detail::aggregate(rep, "uiqm", v_uiqm);
    if (!v_warp.empty()) detail::aggregate(rep, "warp_loss", v_warp);

    for (const std::string& slot : external_metric_slots()) {
        bool provided = false;
        for (const FrameMetrics& fm : rep.frames) provided |= fm.external.count(slot) > 0;
        if (!provided) rep.unavailable.push_back(slot + ": unavailable: requires external model");
    }
    return rep;
}

// Deterministic serialization: stable key order, fixed float formatting.
inline nlohmann::ordered_json report_to_json(const BenchReport& rep) {
    nlohmann::ordered_json j;
    j["provenance"] = rep.provenance;
    nlohmann::ordered_json aggs;
    for (const auto& [name, ms] : rep.aggregates) {
        nlohmann::ordered_json a;
        a["mean"] = detail::fmt_double(ms.first);
        a["std"] = detail::fmt_double(ms.second);
        aggs[name] = a;
    }
    j["aggregates"] = aggs;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const FrameMetrics& fm : rep.frames) {
        nlohmann::ordered_json r;
        r["cam"] = fm.cam;
        r["frame"] = fm.frame;
        if (fm.skipped) {
            r["skipped"] = fm.skip_reason;
        } else {
            r["psnr"] = detail::fmt_double(fm.psnr);
            r["ssim"] = detail::fmt_double(fm.ssim);
            r["mse"] = detail::fmt_double(fm.mse);
            r["gram_style_distance"] = detail::fmt_double(fm.gram_style);
            r["uiqm"] = detail::fmt_double(fm.uiqm.uiqm);
            r["uicm"] = detail::fmt_double(fm.uiqm.uicm);
            r["uism"] = detail::fmt_double(fm.uiqm.uism);
            r["uiconm"] = detail::fmt_double(fm.uiqm.uiconm);
            if (!std::isnan(fm.warp)) r["warp_loss"] = detail::fmt_double(fm.warp);
            for (const auto& [k, v] : fm.external) r[k] = v;
        }
        rows.push_back(r);
    }
    j["per_frame"] = rows;
    j["unavailable"] = rep.unavailable;
    return j;
}

inline void write_report(const BenchReport& rep, const std::string& dir) {
    {
        std::ofstream f(dir + "/report.json", std::ios::binary);
        require(f.good(), "cannot write report.json in " + dir);
        f << report_to_json(rep).dump(2) << "\n";
    }
    std::ofstream f(dir + "/report.csv", std::ios::binary);
    require(f.good(), "cannot write report.csv in " + dir);
    f << "cam,frame,psnr,ssim,mse,gram_style_distance,uiqm,uicm,uism,uiconm,warp_loss";
    std::vector<std::string> ext_cols;
    for (const FrameMetrics& fm : rep.frames)
        for (const auto& [k, v] : fm.external)
            if (std::find(ext_cols.begin(), ext_cols.end(), k) == ext_cols.end())
                ext_cols.push_back(k);
    std::sort(ext_cols.begin(), ext_cols.end());
    for (const std::string& c : ext_cols) f << "," << c;
    f << "\n";
    for (const FrameMetrics& fm : rep.frames) {
        f << fm.cam << "," << fm.frame << "," << detail::fmt_double(fm.psnr) << ","
          << detail::fmt_double(fm.ssim) << "," << detail::fmt_double(fm.mse) << ","
          << detail::fmt_double(fm.gram_style) << "," << detail::fmt_double(fm.uiqm.uiqm) << ","
          << detail::fmt_double(fm.uiqm.uicm) << "," << detail::fmt_double(fm.uiqm.uism) << ","
          << detail::fmt_double(fm.uiqm.uiconm) << ","
          << (std::isnan(fm.warp) ? "" : detail::fmt_double(fm.warp));
        for (const std::string& c : ext_cols) {
            auto it = fm.external.find(c);
            f << "," << (it == fm.external.end() ? "" : it->second);
        }
        f << "\n";
    }
}

} // namespace s4d
