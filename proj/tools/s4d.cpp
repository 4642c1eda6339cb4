// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "s4d/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::string run;
    long long seed = -1;
    int threads = -1;
    bool dump_defaults = false;
    bool dry_run = false;
    bool no_style_mlp = false;
    std::string external_stylized;
    std::string external_flow;
};

s4d::PipelineConfig resolve_config(const CommonArgs& a) {
    s4d::PipelineConfig cfg =
        a.config_path.empty() ? s4d::PipelineConfig{} : s4d::load_config(a.config_path);
    if (a.seed >= 0) cfg.seed = std::uint64_t(a.seed);
    if (a.threads >= 0) cfg.threads = a.threads;
    if (a.no_style_mlp) cfg.style.use_style_mlps = false;
    cfg.geom.seed = cfg.seed;
    cfg.style.seed = cfg.seed;
    cfg.synth.motion = s4d::motion_from_string(cfg.synth_motion);
    s4d::thread_count() = cfg.threads;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out, bool needs_run) {
    cmd->add_option("--config", a.config_path, "structured-text config file");
    if (needs_out) cmd->add_option("--out", a.out, "output run directory")->required();
    if (needs_run) cmd->add_option("--run", a.run, "existing run directory")->required();
    cmd->add_option("--seed", a.seed, "override the config seed");
    cmd->add_option("--threads", a.threads, "worker threads (0 = hardware)");
    cmd->add_flag("--dry-run", a.dry_run, "validate and write the manifest only");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"s4d: dynamic Gaussian-splat stylization pipeline"};
    app.require_subcommand(0, 1);

    CommonArgs a;
    app.add_flag("--dump-defaults", a.dump_defaults, "print the default config and exit");

    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic multi-view scene");
    add_common(c_synth, a, true, false);

    CLI::App* c_geom = app.add_subcommand("train-geom", "fit geometry to the content frames");
    add_common(c_geom, a, false, true);

    CLI::App* c_stylize = app.add_subcommand("stylize", "produce stylized supervision frames");
    add_common(c_stylize, a, false, true);
    c_stylize->add_option("--external-stylized", a.external_stylized,
                          "ingest pre-stylized frames from this directory");

    CLI::App* c_style = app.add_subcommand("train-style", "fit the style stage");
    add_common(c_style, a, false, true);
    c_style->add_flag("--no-style-mlp", a.no_style_mlp, "ablation: train without per-Gaussian MLPs");

    CLI::App* c_render = app.add_subcommand("render", "render test and helical trajectories");
    add_common(c_render, a, false, true);

    CLI::App* c_eval = app.add_subcommand("eval", "compute the metrics report");
    add_common(c_eval, a, false, true);
    c_eval->add_option("--external-flow", a.external_flow,
                       "directory of .flo files overriding estimated flow");

    CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    c_grad->add_option("--seed", a.seed, "base seed");
    c_grad->add_option("--threads", a.threads, "worker threads");

    CLI::App* c_pipe = app.add_subcommand("pipeline", "run every stage end to end");
    add_common(c_pipe, a, true, false);
    c_pipe->add_flag("--no-style-mlp", a.no_style_mlp, "ablation: train without per-Gaussian MLPs");
    c_pipe->add_option("--external-stylized", a.external_stylized,
                       "skip stylization and ingest these frames");

    CLI11_PARSE(app, argc, argv);

    if (a.dump_defaults) {
        std::fputs(s4d::dump_config().c_str(), stdout);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::fputs(app.help().c_str(), stdout);
        return 0;
    }

    try {
        s4d::PipelineConfig cfg = resolve_config(a);
        if (c_synth->parsed()) {
            s4d::cmd_synth(cfg, a.out, a.dry_run);
        } else if (c_geom->parsed()) {
            s4d::cmd_train_geom(cfg, a.run, a.dry_run);
        } else if (c_stylize->parsed()) {
            s4d::cmd_stylize(cfg, a.run, a.external_stylized, a.dry_run);
        } else if (c_style->parsed()) {
            s4d::cmd_train_style(cfg, a.run, a.dry_run);
        } else if (c_render->parsed()) {
            s4d::cmd_render(cfg, a.run, a.dry_run);
        } else if (c_eval->parsed()) {
            s4d::cmd_eval(cfg, a.run, a.external_flow, a.dry_run);
        } else if (c_grad->parsed()) {
            s4d::GradCheckReport rep = s4d::gradcheck(a.seed >= 0 ? std::uint64_t(a.seed) : 1);
            std::printf("gradcheck: rasterizer max rel err %.3g\n", rep.raster_max_rel);
            std::printf("gradcheck: style-mlp  max rel err %.3g\n", rep.mlp_max_rel);
            std::printf("gradcheck: hgst-pixel max rel err %.3g\n", rep.hgst_max_rel);
            std::printf("gradcheck: %d gradient entries checked\n", rep.checked);
            if (!rep.pass()) {
                std::fprintf(stderr, "s4d: gradcheck exceeded the 1e-3 tolerance\n");
                return 2;
            }
        } else if (c_pipe->parsed()) {
            s4d::cmd_pipeline(cfg, a.out, a.external_stylized, a.dry_run);
        }
    } catch (const s4d::NumericError& e) {
        std::fprintf(stderr, "s4d: numerical failure: %s\n", e.what());
        return 2;
    } catch (const s4d::ValidationError& e) {
        std::fprintf(stderr, "s4d: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "s4d: %s\n", e.what());
        return 1;
    }
    return 0;
}
