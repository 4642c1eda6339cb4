// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one check per shipped guarantee, one PASS/FAIL line each.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "s4d/pipeline.hpp"

using namespace s4d;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
    std::printf("criterion %02d [%-22s] %s  %s\n", id, name, pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string tmp_root() {
    static std::string root = [] {
        auto p = fs::temp_directory_path() / "s4d_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return root;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Image textured_image(int res, std::uint64_t seed) { return synth_style_image(res, seed); }

// ------------------------------------------------------------------ 1

void criterion_gradients() {
    thread_count() = 1;
    auto t0 = std::chrono::steady_clock::now();
    GradCheckReport rep = gradcheck(1, 20);
    double dt = seconds_since(t0);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "raster %.2e, mlp %.2e, hgst %.2e over %d entries in %.1fs (limit 60s)",
                  rep.raster_max_rel, rep.mlp_max_rel, rep.hgst_max_rel, rep.checked, dt);
    report(1, "gradient-suite", rep.pass(1e-3) && dt < 60.0, buf);
    thread_count() = 0;
}

// ------------------------------------------------------------------ 2

void criterion_zero_init() {
    bool pass = true;
    for (std::uint64_t seed = 0; seed < 10 && pass; ++seed) {
        Scene s = detail::gradcheck_scene(derive_seed(77, seed), 8, 32);
        s.style_mlps.clear(); // geometry stage
        RenderOutput geo = render(s, s.cameras[0], 0.4);
        Scene st = s;
        for (std::size_t i = 0; i < st.gaussians.size(); ++i)
            st.style_mlps.push_back(mlp_init(derive_seed(seed, i)));
        RenderOutput sty = render(st, st.cameras[0], 0.4);
        pass = geo.image.v.size() == sty.image.v.size() &&
               std::memcmp(geo.image.v.data(), sty.image.v.data(), geo.image.v.size() * 4) == 0 &&
               std::memcmp(geo.alpha.v.data(), sty.alpha.v.data(), geo.alpha.v.size() * 4) == 0;
    }
    report(2, "zero-init-equivalence", pass, "10 scenes, exact byte comparison");
}

// ------------------------------------------------------------------ 3

void criterion_conservation() {
    double worst = 0;
    int renders = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Scene s = detail::gradcheck_scene(derive_seed(31, seed), 6, 24);
        if (seed % 2) s.style_mlps.clear();
        for (int k = 0; k < 4; ++k) {
            double t = k / 3.0;
            RenderCache rc;
            RenderOutput out = render(s, s.cameras[0], t, RasterConfig{}, true, &rc);
            ++renders;
            for (int y = 0; y < 24; ++y)
                for (int x = 0; x < 24; ++x) {
                    std::size_t pix = std::size_t(y) * 24 + x;
                    double T = 1.0;
                    for (std::uint32_t c = rc.contrib_offsets[pix]; c < rc.contrib_offsets[pix + 1];
                         ++c) {
                        detail::PixelContribution pc;
                        detail::eval_contribution(rc, rc.splats[rc.contrib_ids[c]], x, y, pc);
                        T *= 1.0 - pc.alpha;
                    }
                    worst = std::max(worst, std::abs(double(out.alpha.at(0, y, x)) + T - 1.0));
                }
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d renders, worst |alpha + T - 1| = %.2e (limit 1e-6)",
                  renders, worst);
    report(3, "alpha-conservation", worst < 1e-6 && renders >= 100, buf);
}

// ------------------------------------------------------------------ 4

void criterion_loss_identities() {
    int checked = 0, ok = 0;
    auto expect = [&](bool cond) {
        ++checked;
        ok += cond;
    };
    Rng rng(4, 101);
    auto rnd_map = [&](int h, int w, int c) {
        MapD m(h, w, c);
        for (double& v : m.v) v = rng.uniform(-1, 1);
        return m;
    };
    PyramidD pyr;
    int h = 16;
    for (int l = 0; l < kPyrLevels; ++l) {
        pyr.levels[l] = rnd_map(h, h, kPyrChannels[l]);
        h = std::max(1, h / 2);
    }
    expect(style_loss(pyr, pyr) == 0.0);                              // 1
    MapD a = rnd_map(8, 8, 3), b = rnd_map(8, 8, 3);
    expect(identity_loss(a, a, b, b) == 0.0);                         // 2
    expect(identity_loss(a, b, a, b) == identity_loss(a, b, a, b));   // 3 (stable evaluation)
    std::vector<MapD> lv{rnd_map(10, 10, 4)};
    expect(content_loss(lv, lv) == 0.0);                              // 4
    ConsistencyResult cr = consistency_loss(lv, lv, 8, 0.07, 5);
    expect(cr.content == 0.0);                                        // 5
    expect(cr.total == cr.lcl + cr.content);                          // 6
    expect(tv_loss(MapD(6, 6, 3, 0.4)) == 0.0);                       // 7
    MapD c6(6, 6, 3, 0.7);
    expect(reconstruction_loss(c6, c6) == 0.0);                       // 8
    expect(gram_style_distance(pyr, pyr) == 0.0);                     // 9
    {
        Image f = textured_image(32, 9);
        std::vector<Image> frames{f, f, f};
        FlowField zero(32, 32);
        std::vector<FlowField> flows{zero, zero};
        expect(warp_loss(frames, &flows) == 0.0);                     // 10
    }
    {
        Image f = textured_image(32, 10);
        expect(1.0 - ssim(f, f) == 0.0);                              // 11 content-SSIM deficit
    }
    {
        auto id_fn = [](const MapD& x, const MapD&) { return x; };
        expect(illumination_loss(id_fn, a, b, 0.0, 3) == 0.0);        // 12
    }
    {
        LocalDifferenceSet set;
        set.h = set.w = 4;
        set.c = 3;
        set.n_anchors = 1;
        set.anchor_pos = {0};
        set.neighbor_pos = {1};
        set.diffs_g = {0.4, -0.1, 0.2};
        set.diffs_c = {0.3, 0.3, 0.3};
        expect(local_contrastive_loss(set, 0.07) == 0.0);             // 13 single-term softmax
    }
    expect(total_hgst_loss(HgstComponents{}, LossWeights{}).total == 0.0); // 14
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d/%d identity cases exact", ok, checked);
    report(4, "loss-identities", ok == checked && checked >= 12, buf);
}

// ------------------------------------------------------------------ 5

void criterion_lcl_alignment() {
    int violations = 0, trials = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(derive_seed(seed, 2), 3);
        MapD g(10, 10, 4);
        for (double& v : g.v) v = rng.normal();
        MapD c = g;
        for (double& v : c.v) v = 0.8 * v + 0.2 * rng.normal();
        LocalDifferenceSet set = sample_local_differences(g, c, 8, derive_seed(seed, 3));
        double aligned = local_contrastive_loss(set, 0.07);
        const int M = int(set.diffs_c.size() / std::size_t(set.c));
        Rng prng(derive_seed(seed, 4), 5);
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<int> perm(M);
            std::iota(perm.begin(), perm.end(), 0);
            for (int i = M - 1; i > 0; --i)
                std::swap(perm[i], perm[prng.below(std::uint32_t(i + 1))]);
            bool identity = true;
            for (int i = 0; i < M; ++i) identity &= perm[i] == i;
            LocalDifferenceSet shuffled = set;
            for (int m = 0; m < M; ++m)
                for (int ch = 0; ch < set.c; ++ch)
                    shuffled.diffs_c[std::size_t(m) * set.c + ch] =
                        set.diffs_c[std::size_t(perm[m]) * set.c + ch];
            double permuted = local_contrastive_loss(shuffled, 0.07);
            ++trials;
            if (identity ? permuted != aligned : !(aligned < permuted)) ++violations;
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d trials, %d ordering violations", trials, violations);
    report(5, "lcl-alignment", violations == 0, buf);
}

// ------------------------------------------------------------------ 6

void criterion_warp_oracle() {
    auto t0 = std::chrono::steady_clock::now();
    Image frame = textured_image(64, 21);
    Image shifted(64, 64, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                shifted.at(ch, y, x) = frame.at(ch, y, std::min(63, x + 2));
    std::vector<Image> pair{frame, shifted};

    FlowField exact(64, 64);
    for (float& u : exact.u) u = -2.0f;
    std::vector<FlowField> flows{exact};
    double with_exact = warp_loss(pair, &flows);
    double with_lk = warp_loss(pair);

    Image st = textured_image(64, 22);
    std::vector<Image> static_seq{st, st, st};
    double static_loss = warp_loss(static_seq);

    double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "exact flow %.2e (<1e-6), LK flow %.4f (<0.02), static %.1e (=0), %.1fs (<10s)",
                  with_exact, with_lk, static_loss, dt);
    report(6, "warp-oracle", with_exact < 1e-6 && with_lk < 0.02 && static_loss == 0.0 && dt < 10.0,
           buf);
}

// ------------------------------------------------------------------ 7

void criterion_toy_reconstruction() {
    thread_count() = 8;
    auto t0 = std::chrono::steady_clock::now();
    SynthSpec spec; // default toy: 200 gaussians, 5 cams, 20 times, 64x64
    SynthResult res = generate(spec);
    Dataset data;
    for (int c = 0; c < spec.n_cameras; ++c)
        for (int t = 0; t < spec.n_times; ++t) {
            TrainSample s;
            s.cam_index = c;
            s.time = res.times[t];
            s.image = res.frames[std::size_t(c) * spec.n_times + t];
            data.push_back(std::move(s));
        }
    std::vector<ColoredPoint> pts;
    for (const Gaussian& g : res.scene.gaussians) pts.push_back({g.mu, g.color0});
    Scene init = init_from_points(pts, pts.size(), 1);
    init.cameras = res.scene.cameras;
    init.background = res.scene.background;
    TrainConfig cfg;
    cfg.iterations_geom = 4000;
    cfg.seed = 1;
    TrainResult r = train_geometry(std::move(init), data, cfg);
    double dt = seconds_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "train-view PSNR %.2f dB (>=30), %.0fs (<600s)", r.final_psnr, dt);
    report(7, "toy-reconstruction", r.final_psnr >= 30.0 && dt < 600.0, buf);
    thread_count() = 0;
}

// ------------------------------------------------------------------ 8

struct AblationRun {
    double with_mlp = 0, without_mlp = 0, single_stage = 0;
};

AblationRun ablation_for_seed(std::uint64_t seed) {
    SynthSpec spec;
    spec.n_gaussians = 100;
    spec.n_cameras = 3;
    spec.n_times = 6;
    spec.resolution = 48;
    spec.palette_seed = seed;
    SynthResult res = generate(spec);
    Dataset originals;
    for (int c = 0; c < spec.n_cameras; ++c)
        for (int t = 0; t < spec.n_times; ++t) {
            TrainSample s;
            s.cam_index = c;
            s.time = res.times[t];
            s.image = res.frames[std::size_t(c) * spec.n_times + t];
            originals.push_back(std::move(s));
        }

    // Stylized supervision, shared by every variant.
    StylizeJob job;
    job.style = synth_style_image(48, derive_seed(seed, 7));
    job.options.iterations = 40;
    job.options.id_iterations = 5;
    job.options.weights.n_samples = 16;
    job.seed = derive_seed(seed, 8);
    for (const TrainSample& s : originals) {
        FrameKey k;
        k.cam = s.cam_index;
        k.time_index = int(std::lround(s.time * (spec.n_times - 1)));
        job.keys.push_back(k);
        job.content_frames.push_back(s.image);
    }
    std::vector<Image> stylized_frames = stylize_sequence(job);
    Dataset stylized = originals;
    for (std::size_t i = 0; i < stylized.size(); ++i) stylized[i].image = stylized_frames[i];

    std::vector<ColoredPoint> pts;
    for (const Gaussian& g : res.scene.gaussians) pts.push_back({g.mu, g.color0});
    Scene init = init_from_points(pts, pts.size(), seed);
    init.cameras = res.scene.cameras;
    init.background = res.scene.background;

    TrainConfig geom_cfg;
    geom_cfg.iterations_geom = 700;
    geom_cfg.seed = seed;
    TrainResult geo = train_geometry(init, originals, geom_cfg);

    TrainConfig style_cfg;
    style_cfg.iterations_style = 700;
    style_cfg.seed = seed;
    AblationRun run;
    run.with_mlp = train_style(geo.scene, stylized, style_cfg).final_l1;
    TrainConfig ablated = style_cfg;
    ablated.use_style_mlps = false;
    run.without_mlp = train_style(geo.scene, stylized, ablated).final_l1;

    // Single stage: direct geometry-style training on stylized frames from a
    // random initialization, with the combined budget.
    Rng rng(derive_seed(seed, 9), 51);
    std::vector<ColoredPoint> random_pts;
    for (int i = 0; i < spec.n_gaussians; ++i) {
        double r = std::cbrt(rng.uniform());
        double z = rng.uniform(-1, 1);
        double phi = rng.uniform(0, 6.28318530717958647692);
        double sq = std::sqrt(std::max(0.0, 1 - z * z));
        random_pts.push_back({{float(r * sq * std::cos(phi)), float(r * sq * std::sin(phi)),
                               float(r * z)},
                              {float(rng.uniform()), float(rng.uniform()), float(rng.uniform())}});
    }
    Scene rand_init = init_from_points(random_pts, random_pts.size(), derive_seed(seed, 10));
    rand_init.cameras = res.scene.cameras;
    rand_init.background = res.scene.background;
    TrainConfig direct_cfg;
    direct_cfg.iterations_geom = geom_cfg.iterations_geom + style_cfg.iterations_style;
    direct_cfg.seed = seed;
    TrainResult direct = train_geometry(std::move(rand_init), stylized, direct_cfg);
    run.single_stage = direct.final_l1;
    return run;
}

void criterion_ablation() {
    double a = 0, b = 0, c = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        AblationRun r = ablation_for_seed(seed);
        a += r.with_mlp / 3.0;
        b += r.without_mlp / 3.0;
        c += r.single_stage / 3.0;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "mean L1 over 3 seeds: with-mlp %.4f <= no-mlp %.4f <= single-stage %.4f",
                  a, b, c);
    report(8, "ablation-ordering", a <= b + 1e-9 && b <= c + 1e-9, buf);
}

// ------------------------------------------------------------------ 9

void criterion_stylizer_progress() {
    bool pass = true;
    double worst_ratio = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Image content = textured_image(64, derive_seed(seed, 1));
        Image style = textured_image(64, derive_seed(seed, 2));
        StylizeOptions opt; // 300 iterations by default
        StylizeResult r = stylize_frame(content, style, opt, seed);
        double ratio = r.trace.back().total / r.trace.front().total;
        worst_ratio = std::max(worst_ratio, ratio);
        pass = pass && ratio <= 0.5;
        if (seed == 1) {
            StylizeResult again = stylize_frame(content, style, opt, seed);
            pass = pass && std::memcmp(r.image.v.data(), again.image.v.data(),
                                       r.image.v.size() * 4) == 0;
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "5 pairs, worst final/initial ratio %.3f (<=0.5), bit-reproducible",
                  worst_ratio);
    report(9, "stylizer-progress", pass, buf);
}

// ------------------------------------------------------------------ 10

PipelineConfig determinism_config() {
    PipelineConfig cfg;
    cfg.seed = 3;
    cfg.synth.n_gaussians = 60;
    cfg.synth.n_cameras = 2;
    cfg.synth.n_times = 4;
    cfg.synth.resolution = 48;
    cfg.geom.iterations_geom = 150;
    cfg.style.iterations_style = 120;
    cfg.stylize.iterations = 6;
    cfg.stylize.id_iterations = 3;
    cfg.stylize.weights.n_samples = 8;
    cfg.helix_frames = 5;
    return cfg;
}

void criterion_determinism() {
    PipelineConfig cfg = determinism_config();
    // Same leaf directory name so provenance (which echoes it) matches too.
    std::string d1 = tmp_root() + "/t1/run";
    std::string d8 = tmp_root() + "/t8/run";
    thread_count() = 1;
    cmd_pipeline(cfg, d1);
    thread_count() = 8;
    cmd_pipeline(cfg, d8);
    thread_count() = 0;
    bool pass = true;
    for (const char* f : {"report.json", "scene_geom.s4ds", "scene_style.s4ds"}) {
        std::string a = file_bytes(d1 + "/" + f);
        std::string bb = file_bytes(d8 + "/" + f);
        if (a.empty() || a != bb) {
            pass = false;
            std::printf("  determinism mismatch in %s (%zu vs %zu bytes)\n", f, a.size(), bb.size());
        }
    }
    report(10, "thread-determinism", pass,
           "full pipeline byte-identical at --threads 1 and --threads 8");
}

// ------------------------------------------------------------------ 11

void criterion_schedule() {
    TrainConfig cfg;
    bool endpoints = lr_at(0, 14000, cfg) == 1e-4 && lr_at(14000, 14000, cfg) == 1e-5;
    double mid = lr_at(7000, 14000, cfg);
    double gm = std::sqrt(1e-4 * 1e-5);
    bool midpoint = std::abs(mid - gm) / gm < 1e-12;
    char buf[96];
    std::snprintf(buf, sizeof buf, "lr(0)=%.6g lr(total)=%.6g mid rel err %.2e", lr_at(0, 14000, cfg),
                  lr_at(14000, 14000, cfg), std::abs(mid - gm) / gm);
    report(11, "schedule-endpoints", endpoints && midpoint, buf);
}

} // namespace

int main() {
    std::printf("s4d acceptance suite\n");
    auto t0 = std::chrono::steady_clock::now();
    criterion_gradients();
    criterion_zero_init();
    criterion_conservation();
    criterion_loss_identities();
    criterion_lcl_alignment();
    criterion_warp_oracle();
    criterion_toy_reconstruction();
    criterion_ablation();
    criterion_stylizer_progress();
    criterion_determinism();
    criterion_schedule();
    std::printf("%s (%d/11 criteria, %.0fs total)\n", g_failures == 0 ? "ALL PASS" : "FAILURES",
                11 - g_failures, seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
