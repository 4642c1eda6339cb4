// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "s4d/config.hpp"
#include "s4d/metrics.hpp"
#include "s4d/stylizer.hpp"
#include "s4d/synth.hpp"
#include "s4d/trainer.hpp"

namespace s4d {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- run io

inline std::string cam_name(int c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "cam%02d", c);
    return buf;
}

inline std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", t);
    return buf;
}

// Loads (camera, time, image) samples from <run>/<subdir>/camNN/ using the
// camera list at <run>/cameras.txt.
inline LoadedDataset load_run_dataset(const std::string& run, const std::string& subdir) {
    require(fs::is_directory(run + "/" + subdir), "missing " + subdir + "/ under " + run);
    LoadedDataset out;
    out.cameras = load_cameras_txt(run + "/cameras.txt");
    int expected = -1;
    for (std::size_t c = 0; c < out.cameras.size(); ++c) {
        std::string camdir = run + "/" + subdir + "/" + cam_name(int(c));
        require(fs::is_directory(camdir), "missing camera folder " + camdir);
        std::vector<int> ids;
        for (const auto& e : fs::directory_iterator(camdir))
            if (e.path().extension() == ".imgf32") ids.push_back(std::stoi(e.path().stem().string()));
        std::sort(ids.begin(), ids.end());
        require(!ids.empty(), "no frames in " + camdir);
        if (expected < 0) expected = int(ids.size());
        require(int(ids.size()) == expected, "camera " + cam_name(int(c)) + " has " +
                                                 std::to_string(ids.size()) + " frames, expected " +
                                                 std::to_string(expected));
        for (int t = 0; t < expected; ++t) {
            TrainSample s;
            s.cam_index = int(c);
            s.time = expected > 1 ? double(t) / double(expected - 1) : 0.0;
            s.image = load_imgf32(camdir + "/" + frame_name(ids[t]) + ".imgf32");
            out.samples.push_back(std::move(s));
        }
    }
    out.n_times = expected;
    return out;
}

inline LogSink jsonl_sink(std::ofstream& f) {
    return [&f](const std::string& row) { f << row << "\n"; };
}

// ---------------------------------------------------------------- stages

// synth: ground-truth frames, analytic flows, cameras, style image.
inline void cmd_synth(const PipelineConfig& cfg, const std::string& out, bool dry_run = false) {
    PipelineConfig c = cfg;
    c.synth.motion = motion_from_string(cfg.synth_motion);
    validate(c.synth);
    write_manifest(out, "synth", cfg, {},
                   {"originals/", "flows/", "cameras.txt", "scene_gt.s4ds", "style.imgf32"});
    if (dry_run) return;
    SynthResult res = generate(c.synth);
    write_synth_run(res, c.synth, out);
    Image style = synth_style_image(c.synth.resolution, derive_seed(cfg.seed, 0x5717));
    save_imgf32(style, out + "/style.imgf32");
    save_png(style, out + "/style.png");
    log_info("synth: wrote %d cameras x %d frames to %s", c.synth.n_cameras, c.synth.n_times,
             out.c_str());
}

// train-geom: fit geometry + deformation to the content frames.
inline TrainResult cmd_train_geom(const PipelineConfig& cfg, const std::string& run,
                                  bool dry_run = false) {
    require(fs::exists(run + "/cameras.txt"), "train-geom: missing cameras.txt in " + run);
    require(fs::exists(run + "/scene_gt.s4ds") || fs::exists(run + "/points.txt"),
            "train-geom: need scene_gt.s4ds or points.txt in " + run + " for initialization");
    write_manifest(run, "train-geom", cfg,
                   {{"cameras.txt", hash_file(run + "/cameras.txt")}},
                   {"scene_geom.s4ds", "scene_geom.adam", "train_geom.jsonl"});
    if (dry_run) return {};

    LoadedDataset data = load_run_dataset(run, "originals");

    std::vector<ColoredPoint> points;
    if (fs::exists(run + "/scene_gt.s4ds")) {
        Scene gt = load_scene(run + "/scene_gt.s4ds");
        for (const Gaussian& g : gt.gaussians) points.push_back({g.mu, g.color0});
    } else {
        std::ifstream f(run + "/points.txt");
        float x, y, z, r, g, b;
        while (f >> x >> y >> z >> r >> g >> b) points.push_back({{x, y, z}, {r, g, b}});
        require(!points.empty(), "train-geom: points.txt is empty");
    }
    Scene init = init_from_points(points, points.size(), cfg.seed);
    init.cameras = data.cameras;
    if (fs::exists(run + "/scene_gt.s4ds"))
        init.background = load_scene(run + "/scene_gt.s4ds").background;

    TrainConfig tc = cfg.geom;
    tc.seed = cfg.seed;
    std::ofstream logf(run + "/train_geom.jsonl", std::ios::binary);
    TrainResult res = train_geometry(std::move(init), data.samples, tc, jsonl_sink(logf),
                                     [&](int step, const Scene& s) {
                                         save_scene(s, run + "/scene_geom_" +
                                                           std::to_string(step) + ".s4ds");
                                     });
    save_scene(res.scene, run + "/scene_geom.s4ds");
    log_info("train-geom: final L1 %.5f, PSNR %.2f dB", res.final_l1, res.final_psnr);
    return res;
}

// stylize: optimize supervision frames (or ingest external ones).
inline void cmd_stylize(const PipelineConfig& cfg, const std::string& run,
                        const std::string& external_dir = "", bool dry_run = false) {
    require(fs::exists(run + "/style.imgf32"), "stylize: missing style.imgf32 in " + run);
    write_manifest(run, "stylize", cfg, {{"style.imgf32", hash_file(run + "/style.imgf32")}},
                   {"stylized/"});
    if (dry_run) return;
    LoadedDataset data = load_run_dataset(run, "originals");
    Image style = load_imgf32(run + "/style.imgf32");

    std::vector<Image> results;
    StylizeJob job;
    if (!external_dir.empty()) {
        // Ingest pre-stylized frames; validate shape per key.
        for (const TrainSample& s : data.samples) {
            int t_index = int(std::lround(s.time * (data.n_times - 1)));
            std::string path = external_dir + "/" + cam_name(s.cam_index) + "/" +
                               frame_name(t_index) + ".imgf32";
            require(fs::exists(path), "external stylized frame missing: " + path);
            Image img = load_imgf32(path);
            require(img.same_shape(s.image), "external stylized frame has wrong shape: " + path);
            results.push_back(std::move(img));
        }
    } else {
        job.style = style;
        job.options = cfg.stylize;
        job.seed = derive_seed(cfg.seed, 0x7a11);
        for (const TrainSample& s : data.samples) {
            FrameKey key;
            key.cam = s.cam_index;
            key.time_index = int(std::lround(s.time * (data.n_times - 1)));
            job.keys.push_back(key);
            job.content_frames.push_back(s.image);
        }
        results = stylize_sequence(job);
    }

    for (std::size_t i = 0; i < results.size(); ++i) {
        const TrainSample& s = data.samples[i];
        int t_index = int(std::lround(s.time * (data.n_times - 1)));
        std::string dir = run + "/stylized/" + cam_name(s.cam_index);
        fs::create_directories(dir);
        save_frame(results[i], dir + "/" + frame_name(t_index));
    }
    log_info("stylize: wrote %zu frames", results.size());
}

// train-style: fit style MLPs, colors, opacities against stylized frames.
inline TrainResult cmd_train_style(const PipelineConfig& cfg, const std::string& run,
                                   bool dry_run = false) {
    require(fs::exists(run + "/scene_geom.s4ds"),
            "train-style: missing checkpoint scene_geom.s4ds in " + run +
                " (run train-geom first)");
    require(fs::is_directory(run + "/stylized"), "train-style: missing stylized/ in " + run);
    write_manifest(run, "train-style", cfg,
                   {{"scene_geom.s4ds", hash_file(run + "/scene_geom.s4ds")}},
                   {"scene_style.s4ds", "train_style.jsonl"});
    if (dry_run) return {};

    Scene scene = load_scene(run + "/scene_geom.s4ds");
    LoadedDataset stylized = load_run_dataset(run, "stylized");
    require(stylized.cameras.size() == scene.cameras.size(),
            "train-style: stylized camera count mismatch");

    TrainConfig tc = cfg.style;
    tc.seed = cfg.seed;
    std::ofstream logf(run + "/train_style.jsonl", std::ios::binary);
    TrainResult res = train_style(std::move(scene), stylized.samples, tc, jsonl_sink(logf),
                                  [&](int step, const Scene& s) {
                                      save_scene(s, run + "/scene_style_" +
                                                        std::to_string(step) + ".s4ds");
                                  });
    save_scene(res.scene, run + "/scene_style.s4ds");
    log_info("train-style: final L1 %.5f", res.final_l1);
    return res;
}

// render: test-view frames plus a helical trajectory.
inline void cmd_render(const PipelineConfig& cfg, const std::string& run, bool dry_run = false) {
    std::string scene_path = fs::exists(run + "/scene_style.s4ds") ? run + "/scene_style.s4ds"
                                                                   : run + "/scene_geom.s4ds";
    require(fs::exists(scene_path), "render: no trained scene checkpoint in " + run);
    write_manifest(run, "render", cfg, {{fs::path(scene_path).filename().string(), hash_file(scene_path)}},
                   {"frames/", "helix/"});
    if (dry_run) return;

    Scene scene = load_scene(scene_path);
    LoadedDataset data = load_run_dataset(run, "originals");

    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const TrainSample& s = data.samples[i];
        int t_index = int(std::lround(s.time * (data.n_times - 1)));
        std::string dir = run + "/frames/" + cam_name(s.cam_index);
        fs::create_directories(dir);
        RenderOutput out = render(scene, scene.cameras[s.cam_index], s.time);
        save_frame(out.image, dir + "/" + frame_name(t_index));
    }

    // Helical trajectory at the dataset resolution.
    const Camera& ref = scene.cameras[0];
    std::vector<Camera> helix =
        helix_poses({0, 0, 0}, cfg.helix_radius, cfg.helix_turns, cfg.helix_frames, cfg.helix_z0,
                    cfg.helix_z1, ref.fx, ref.fy, ref.cx, ref.cy, ref.width, ref.height);
    std::vector<double> times(helix.size());
    for (std::size_t i = 0; i < helix.size(); ++i)
        times[i] = helix.size() > 1 ? double(i) / double(helix.size() - 1) : 0.0;
    fs::create_directories(run + "/helix");
    auto frames = render_trajectory(scene, helix, times);
    for (std::size_t i = 0; i < frames.size(); ++i)
        save_frame(frames[i].image, run + "/helix/" + frame_name(int(i)));
    log_info("render: wrote %zu test frames and %zu helix frames", data.samples.size(),
             frames.size());
}

// eval: metrics report over the run directory.
inline BenchReport cmd_eval(const PipelineConfig& cfg, const std::string& run,
                            const std::string& external_flow_dir = "", bool dry_run = false) {
    write_manifest(run, "eval", cfg, {{"style.imgf32", hash_file(run + "/style.imgf32")}},
                   {"report.json", "report.csv"});
    if (dry_run) return {};
    EvalSpec spec;
    BenchReport rep = evaluate(run, spec);
    (void)external_flow_dir; // flows are read from <run>/flows when present
    // Helical spatiotemporal consistency, when rendered.
    if (fs::is_directory(run + "/helix")) {
        std::vector<int> ids;
        for (const auto& e : fs::directory_iterator(run + "/helix"))
            if (e.path().extension() == ".imgf32") ids.push_back(std::stoi(e.path().stem().string()));
        std::sort(ids.begin(), ids.end());
        std::vector<Image> seq;
        for (int id : ids) seq.push_back(load_imgf32(run + "/helix/" + frame_name(id) + ".imgf32"));
        if (seq.size() >= 2) {
            double wl = warp_loss(seq);
            rep.aggregates["helix_warp_loss"] = {wl, 0.0};
        }
    }
    write_report(rep, run);
    log_info("eval: wrote report.json (%zu frame rows)", rep.frames.size());
    return rep;
}

// pipeline: synth/load -> train-geom -> stylize -> train-style -> render -> eval.
inline BenchReport cmd_pipeline(const PipelineConfig& cfg, const std::string& out,
                                const std::string& external_stylized = "",
                                bool dry_run = false) {
    write_manifest(out, "pipeline", cfg, {}, {"report.json", "scene_geom.s4ds", "scene_style.s4ds"});
    std::string stage = "synth";
    try {
        if (cfg.data_dir.empty()) {
            cmd_synth(cfg, out, dry_run);
        } else {
            stage = "load";
            require(fs::is_directory(cfg.data_dir), "pipeline: data.dir is not a directory");
            if (!dry_run) {
                LoadedDataset data = load_neu3d_style(cfg.data_dir);
                fs::create_directories(out);
                save_cameras_txt(data.cameras, out + "/cameras.txt");
                for (const TrainSample& s : data.samples) {
                    int t_index = int(std::lround(s.time * (data.n_times - 1)));
                    std::string dir = out + "/originals/" + cam_name(s.cam_index);
                    fs::create_directories(dir);
                    save_frame(s.image, dir + "/" + frame_name(t_index));
                }
                require(fs::exists(cfg.data_dir + "/style.imgf32") ||
                            fs::exists(cfg.data_dir + "/style.png"),
                        "pipeline: dataset needs a style image (style.imgf32 or style.png)");
                Image style = fs::exists(cfg.data_dir + "/style.imgf32")
                                  ? load_imgf32(cfg.data_dir + "/style.imgf32")
                                  : load_png(cfg.data_dir + "/style.png");
                save_imgf32(style, out + "/style.imgf32");
                if (fs::exists(cfg.data_dir + "/scene_gt.s4ds"))
                    fs::copy_file(cfg.data_dir + "/scene_gt.s4ds", out + "/scene_gt.s4ds",
                                  fs::copy_options::overwrite_existing);
                if (fs::exists(cfg.data_dir + "/points.txt"))
                    fs::copy_file(cfg.data_dir + "/points.txt", out + "/points.txt",
                                  fs::copy_options::overwrite_existing);
            }
        }
        stage = "train-geom";
        cmd_train_geom(cfg, out, dry_run);
        stage = "stylize";
        cmd_stylize(cfg, out, external_stylized, dry_run);
        stage = "train-style";
        cmd_train_style(cfg, out, dry_run);
        stage = "render";
        cmd_render(cfg, out, dry_run);
        stage = "eval";
        return cmd_eval(cfg, out, "", dry_run);
    } catch (const ValidationError& e) {
        throw ValidationError("pipeline stage '" + stage + "': " + e.what());
    } catch (const NumericError& e) {
        throw NumericError("pipeline stage '" + stage + "': " + e.what());
    }
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckReport {
    double raster_max_rel = 0;
    double mlp_max_rel = 0;
    double hgst_max_rel = 0;
    int checked = 0;
    bool pass(double tol = 1e-3) const {
        return raster_max_rel < tol && mlp_max_rel < tol && hgst_max_rel < tol;
    }
};

namespace detail {

inline Scene gradcheck_scene(std::uint64_t seed, int n_gaussians, int res) {
    Rng rng(seed, 21);
    Scene s;
    for (int i = 0; i < n_gaussians; ++i) {
        Gaussian g;
        for (int k = 0; k < 3; ++k) g.mu[k] = float(rng.uniform(-0.8, 0.8));
        double q[4], n2 = 0;
        for (double& qq : q) { qq = rng.normal(); n2 += qq * qq; }
        double nn = std::sqrt(std::max(n2, 1e-12));
        for (int k = 0; k < 4; ++k) g.rot[k] = float(q[k] / nn);
        double fn2 = 0;
        for (float qq : g.rot) fn2 += double(qq) * qq;
        for (float& qq : g.rot) qq = float(double(qq) / std::sqrt(fn2));
        for (int k = 0; k < 3; ++k) g.scale[k] = float(rng.uniform(0.1, 0.35));
        g.opacity = float(rng.uniform(0.3, 0.9));
        for (int k = 0; k < 3; ++k) g.color0[k] = float(rng.uniform(0.05, 0.95));
        s.gaussians.push_back(g);
    }
    for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
        TinyMlpParams p = mlp_init(derive_seed(seed, i));
        Rng r2(derive_seed(seed, i, 77));
        for (float& v : p.w2) v = float(r2.uniform(-0.3, 0.3));
        for (float& v : p.b2) v = float(r2.uniform(-0.1, 0.1));
        s.style_mlps.push_back(p);
    }
    s.deformation = DeformationField::init(derive_seed(seed, 5), 2, 8);
    Rng r3(derive_seed(seed, 9));
    for (float& p : s.deformation.params) p += float(r3.uniform(-0.02, 0.02));
    double az = rng.uniform(0, 6.28);
    float f = float(res) * 1.2f;
    s.cameras.push_back(look_at({3.0 * std::cos(az), 3.0 * std::sin(az), rng.uniform(-0.5, 0.5)},
                                {0, 0, 0}, f, f, float(res - 1) / 2, float(res - 1) / 2, res, res));
    s.background = {float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), float(rng.uniform(0, 1))};
    s.scene_radius = compute_scene_radius(s.gaussians);
    return s;
}

inline double grad_rel(double analytic, double fd) {
    double diff = std::abs(analytic - fd);
    return diff <= 1e-6 ? 0.0 : diff / std::max(std::abs(analytic), std::abs(fd));
}

// Adaptive central difference through an f32 slot (see tests for rationale:
// shrinking steps separate relu-kink windows from genuine mismatches).
template <class Eval>
double fd_rel(Eval&& eval, float* slot, double analytic, double h0) {
    double best = 1e300;
    for (double h : {h0, h0 * 0.125, h0 * 0.015625}) {
        float keep = *slot;
        *slot = float(double(keep) + h);
        double lp = eval();
        double hi = double(*slot);
        *slot = float(double(keep) - h);
        double lm = eval();
        double lo = double(*slot);
        *slot = keep;
        best = std::min(best, grad_rel(analytic, (lp - lm) / (hi - lo)));
        if (best < 1e-4) break;
    }
    return best;
}

} // namespace detail

// Finite-difference verification of the three backward paths. Instance
// counts match the acceptance gate; single-threaded runtime stays in budget.
inline GradCheckReport gradcheck(std::uint64_t seed, int instances = 20) {
    GradCheckReport rep;

    // Rasterizer: every parameter group on small exact-mode scenes.
    for (int inst = 0; inst < instances; ++inst) {
        const int res = 8;
        Scene s = detail::gradcheck_scene(derive_seed(seed, inst), 3, res);
        Image weights(res, res, 3);
        Rng rng(derive_seed(seed, inst, 55));
        for (float& v : weights.v) v = float(rng.uniform(-1, 1));
        RasterConfig cfg;
        cfg.exact = true;
        double t = 0.37;
        RenderCache rc;
        render(s, s.cameras[0], t, cfg, true, &rc);
        SceneGrads gr = composite_backward(rc, weights);
        auto eval = [&] {
            RenderOutput o = render(s, s.cameras[0], t, cfg);
            double acc = 0;
            for (std::size_t i = 0; i < o.image_f64.size(); ++i)
                acc += double(weights.v[i]) * o.image_f64[i];
            return acc;
        };
        auto check = [&](float* slot, double analytic) {
            rep.raster_max_rel =
                std::max(rep.raster_max_rel, detail::fd_rel(eval, slot, analytic, 1e-3));
            rep.checked++;
        };
        for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
            Gaussian& g = s.gaussians[i];
            for (int k = 0; k < 3; ++k) check(&g.mu[k], gr.mu[3 * i + k]);
            for (int k = 0; k < 4; ++k) check(&g.rot[k], gr.rot[4 * i + k]);
            for (int k = 0; k < 3; ++k) check(&g.scale[k], gr.scale[3 * i + k]);
            check(&g.opacity, gr.opacity[i]);
            for (int k = 0; k < 3; ++k) check(&g.color0[k], gr.color0[3 * i + k]);
            TinyMlpParams& mp = s.style_mlps[i];
            for (int k = 0; k < TinyMlpParams::kCount; ++k) {
                float* slot = k < 8 ? &mp.w1[k]
                              : k < 12 ? &mp.b1[k - 8]
                              : k < 28 ? &mp.w2[k - 12]
                                       : &mp.b2[k - 28];
                check(slot, gr.mlp[std::size_t(TinyMlpParams::kCount) * i + k]);
            }
        }
        for (std::size_t k = 0; k < s.deformation.params.size(); ++k)
            check(&s.deformation.params[k], gr.deform[k]);
    }

    // Tiny MLP in isolation.
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(derive_seed(seed, 1000 + inst), 13);
        float flat[TinyMlpParams::kCount];
        for (float& v : flat) v = float(rng.normal() * 0.7);
        TinyMlpParams p = TinyMlpParams::unflatten(flat);
        double t = rng.uniform(), depth = rng.uniform();
        double up[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        MlpOut o = mlp_forward(p, t, depth);
        double pg[TinyMlpParams::kCount] = {};
        double ig[2] = {0, 0};
        mlp_backward(p, t, depth, o, up, pg, ig);
        auto loss = [&](const TinyMlpParams& q) {
            MlpOut r = mlp_forward(q, t, depth);
            return up[0] * r.rgb[0] + up[1] * r.rgb[1] + up[2] * r.rgb[2] + up[3] * r.opacity_logit;
        };
        for (int k = 0; k < TinyMlpParams::kCount; ++k) {
            auto eval = [&] { return loss(TinyMlpParams::unflatten(flat)); };
            rep.mlp_max_rel = std::max(rep.mlp_max_rel, detail::fd_rel(eval, &flat[k], pg[k], 1e-4));
            rep.checked++;
        }
    }

    // Full objective pixel gradients through the double pyramid path.
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(derive_seed(seed, 2000 + inst), 31);
        const int res = 16;
        MapD content(res, res, 3), style(res, res, 3), x(res, res, 3);
        for (double& v : content.v) v = rng.uniform(0, 1);
        for (double& v : style.v) v = rng.uniform(0, 1);
        for (std::size_t i = 0; i < x.v.size(); ++i)
            x.v[i] = std::clamp(content.v[i] + rng.uniform(-0.1, 0.1), 0.0, 1.0);
        LossWeights w;
        w.n_samples = 16;
        s4d::detail::HgstContext ctx =
            s4d::detail::make_context(content, style, w, derive_seed(seed, 3000 + inst));
        s4d::detail::HgstEval ev = s4d::detail::hgst_eval(ctx, x, true);
        auto eval = [&] { return s4d::detail::hgst_eval(ctx, x, false).value.total; };
        Rng pick(derive_seed(seed, 4000 + inst));
        for (int k = 0; k < 40; ++k) {
            std::size_t i = pick.below(std::uint32_t(x.v.size()));
            double best = 1e300;
            for (double h : {1e-4, 1e-5, 1e-6}) {
                double keep = x.v[i];
                x.v[i] = keep + h;
                double lp = eval();
                x.v[i] = keep - h;
                double lm = eval();
                x.v[i] = keep;
                best = std::min(best, detail::grad_rel(ev.pixel_grad.v[i], (lp - lm) / (2 * h)));
                if (best < 1e-4) break;
            }
            rep.hgst_max_rel = std::max(rep.hgst_max_rel, best);
            rep.checked++;
        }
    }
    return rep;
}

} // namespace s4d
