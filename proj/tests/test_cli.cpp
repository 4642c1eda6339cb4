// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "s4d/config.hpp"
#include "s4d/metrics.hpp"
#include "test_helpers.hpp"

using namespace s4d;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    std::string out_file = test::temp_dir("cli_out") + "/out.txt";
    std::string cmd = std::string(S4D_TOOL_PATH) + " " + args + " > " + out_file + " 2>&1";
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream f(out_file);
    std::stringstream ss;
    ss << f.rdbuf();
    r.output = ss.str();
    return r;
}

std::string write_small_config(const std::string& dir) {
    PipelineConfig cfg;
    cfg.synth.n_gaussians = 40;
    cfg.synth.n_cameras = 2;
    cfg.synth.n_times = 3;
    cfg.synth.resolution = 32;
    cfg.geom.iterations_geom = 20;
    cfg.style.iterations_style = 15;
    cfg.stylize.iterations = 4;
    cfg.stylize.id_iterations = 2;
    cfg.stylize.weights.n_samples = 8;
    cfg.helix_frames = 4;
    std::string path = dir + "/small.cfg";
    std::ofstream f(path);
    f << dump_config(cfg);
    return path;
}

} // namespace

TEST(Cli, DumpDefaultsRoundTrips) {
    RunResult r = run_cli("--dump-defaults");
    EXPECT_EQ(r.exit_code, 0);
    PipelineConfig cfg = parse_config_text(r.output);
    EXPECT_EQ(cfg.geom.iterations_geom, 4000);
    EXPECT_EQ(cfg.style.iterations_style, 10000);
    EXPECT_DOUBLE_EQ(cfg.stylize.weights.style, 18.0);
}

TEST(Cli, UnknownFlagFails) {
    RunResult r = run_cli("synth --does-not-exist x");
    EXPECT_NE(r.exit_code, 0);
}

TEST(Cli, UnknownConfigKeyFails) {
    std::string dir = test::temp_dir("cli_badcfg");
    std::string path = dir + "/bad.cfg";
    {
        std::ofstream f(path);
        f << "[synth]\nn_gaussianz = 5\n";
    }
    RunResult r = run_cli("synth --config " + path + " --out " + dir + "/run");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("n_gaussianz"), std::string::npos);
}

TEST(Cli, TrainStyleWithoutCheckpointNamesIt) {
    std::string dir = test::temp_dir("cli_nockpt");
    fs::create_directories(dir + "/run");
    RunResult r = run_cli("train-style --run " + dir + "/run");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("scene_geom.s4ds"), std::string::npos);
}

TEST(Cli, SynthEvalSelfComparison) {
    std::string dir = test::temp_dir("cli_selfeval");
    std::string cfg = write_small_config(dir);
    {
        // Static motion: identical frames over time, so the temporal warp
        // term vanishes along with the content terms.
        std::ofstream f(cfg, std::ios::app);
        f << "\n[synth]\nmotion = static\n";
    }
    std::string run = dir + "/run";
    ASSERT_EQ(run_cli("synth --config " + cfg + " --out " + run).exit_code, 0);
    // Evaluate the synthesized originals against themselves.
    fs::create_directories(run + "/frames");
    for (const auto& e : fs::directory_iterator(run + "/originals"))
        fs::copy(e.path(), run + "/frames/" + e.path().filename().string(),
                 fs::copy_options::recursive);
    ASSERT_EQ(run_cli("eval --run " + run).exit_code, 0);
    ASSERT_TRUE(fs::exists(run + "/report.json"));
    std::ifstream f(run + "/report.json");
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(f);
    EXPECT_EQ(j["aggregates"]["ssim"]["mean"], "1");
    EXPECT_EQ(j["aggregates"]["warp_loss"]["mean"], "0");
    EXPECT_EQ(j["aggregates"]["mse"]["mean"], "0");
}

TEST(Cli, DryRunWritesManifestOnly) {
    std::string dir = test::temp_dir("cli_dry");
    std::string cfg = write_small_config(dir);
    std::string run = dir + "/run";
    ASSERT_EQ(run_cli("synth --config " + cfg + " --out " + run + " --dry-run").exit_code, 0);
    EXPECT_TRUE(fs::exists(run + "/manifest_synth.json"));
    EXPECT_FALSE(fs::exists(run + "/originals"));
    EXPECT_FALSE(fs::exists(run + "/style.imgf32"));
}

TEST(Cli, GradcheckPasses) {
    RunResult r = run_cli("gradcheck --seed 7");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.output.find("rasterizer max rel err"), std::string::npos);
}

TEST(Cli, StagewisePipelineProducesReport) {
    std::string dir = test::temp_dir("cli_stages");
    std::string cfg = write_small_config(dir);
    std::string run = dir + "/run";
    ASSERT_EQ(run_cli("synth --config " + cfg + " --out " + run).exit_code, 0);
    ASSERT_EQ(run_cli("train-geom --config " + cfg + " --run " + run).exit_code, 0);
    ASSERT_EQ(run_cli("stylize --config " + cfg + " --run " + run).exit_code, 0);
    ASSERT_EQ(run_cli("train-style --config " + cfg + " --run " + run).exit_code, 0);
    ASSERT_EQ(run_cli("render --config " + cfg + " --run " + run).exit_code, 0);
    ASSERT_EQ(run_cli("eval --config " + cfg + " --run " + run).exit_code, 0);
    EXPECT_TRUE(fs::exists(run + "/report.json"));
    EXPECT_TRUE(fs::exists(run + "/report.csv"));
    EXPECT_TRUE(fs::exists(run + "/scene_style.s4ds"));
    EXPECT_TRUE(fs::exists(run + "/helix/0000.png"));

    std::ifstream f(run + "/report.json");
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(f);
    EXPECT_TRUE(j.contains("aggregates"));
    EXPECT_TRUE(j["aggregates"].contains("helix_warp_loss"));
    EXPECT_GT(j["per_frame"].size(), 0u);
}

TEST(Cli, ExternalStylizedIngestion) {
    std::string dir = test::temp_dir("cli_ext");
    std::string cfg = write_small_config(dir);
    std::string run = dir + "/run";
    ASSERT_EQ(run_cli("synth --config " + cfg + " --out " + run).exit_code, 0);
    // External stylized frames: reuse originals (valid shapes).
    std::string ext = dir + "/external";
    fs::create_directories(ext);
    for (const auto& e : fs::directory_iterator(run + "/originals"))
        fs::copy(e.path(), ext + "/" + e.path().filename().string(), fs::copy_options::recursive);
    ASSERT_EQ(run_cli("stylize --config " + cfg + " --run " + run + " --external-stylized " + ext)
                  .exit_code,
              0);
    EXPECT_TRUE(fs::exists(run + "/stylized/cam00/0000.imgf32"));
    // Bad shape rejected.
    std::string bad = dir + "/bad_external";
    fs::create_directories(bad + "/cam00");
    fs::create_directories(bad + "/cam01");
    for (int c = 0; c < 2; ++c)
        for (int t = 0; t < 3; ++t) {
            char fn[32];
            std::snprintf(fn, sizeof fn, "cam%02d/%04d.imgf32", c, t);
            save_imgf32(Image(16, 16, 3, 0.5f), bad + "/" + fn);
        }
    RunResult r = run_cli("stylize --config " + cfg + " --run " + run + " --external-stylized " + bad);
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("shape"), std::string::npos);
}
