// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "s4d/synth.hpp"
#include "s4d/trainer.hpp"
#include "test_helpers.hpp"

using namespace s4d;

namespace {

// Fully covered little scene: fat opaque gaussians so the background barely
// leaks through.
Scene covered_scene(std::uint64_t seed, int n, int res) {
    Scene s = test::random_scene(seed, n, res);
    Rng rng(seed, 91);
    for (Gaussian& g : s.gaussians) {
        for (int k = 0; k < 3; ++k) g.scale[k] = float(rng.uniform(0.3, 0.6));
        g.opacity = float(rng.uniform(0.85, 0.95));
    }
    s.deformation = DeformationField::init(seed + 1);
    s.scene_radius = compute_scene_radius(s.gaussians);
    return s;
}

Dataset render_dataset(const Scene& s, int n_times) {
    Dataset data;
    for (std::size_t c = 0; c < s.cameras.size(); ++c)
        for (int t = 0; t < n_times; ++t) {
            TrainSample smp;
            smp.cam_index = int(c);
            smp.time = n_times > 1 ? double(t) / (n_times - 1) : 0.0;
            smp.image = render(s, s.cameras[c], smp.time).image;
            data.push_back(std::move(smp));
        }
    return data;
}

std::string scene_bytes(const Scene& s) {
    std::string path = test::temp_dir("scene_bytes") + "/s.s4ds";
    save_scene(s, path);
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST(TrainGeometry, FixedPointStaysAboveFiftyDb) {
    // The dataset is rendered from the scene itself: training starts at the
    // optimum (up to the TV pull) and must hold PSNR > 50 dB.
    Scene s = covered_scene(3, 24, 32);
    Dataset data = render_dataset(s, 3);
    TrainConfig cfg;
    cfg.iterations_geom = 80;
    cfg.seed = 5;
    TrainResult res = train_geometry(s, data, cfg);
    EXPECT_GT(res.final_psnr, 50.0);
}

TEST(TrainGeometry, DeterministicGivenSeed) {
    Scene s = covered_scene(4, 10, 32);
    Dataset data = render_dataset(s, 2);
    TrainConfig cfg;
    cfg.iterations_geom = 12;
    cfg.seed = 9;
    TrainResult a = train_geometry(s, data, cfg);
    TrainResult b = train_geometry(s, data, cfg);
    EXPECT_EQ(scene_bytes(a.scene), scene_bytes(b.scene));
}

TEST(TrainGeometry, RejectsEmptyDataset) {
    Scene s = covered_scene(5, 4, 32);
    EXPECT_THROW(train_geometry(s, {}, TrainConfig{}), ValidationError);
}

TEST(TrainStyle, GeometryBitsFrozen) {
    Scene s = covered_scene(6, 12, 32);
    Dataset targets = render_dataset(s, 2);
    // Perturb targets so the optimizer actually moves appearance.
    for (TrainSample& t : targets)
        for (float& v : t.image.v) v = std::min(1.0f, v + 0.05f);
    TrainConfig cfg;
    cfg.iterations_style = 30;
    cfg.seed = 11;
    Scene before = s;
    TrainResult res = train_style(std::move(s), targets, cfg);
    ASSERT_EQ(res.scene.gaussians.size(), before.gaussians.size());
    for (std::size_t i = 0; i < before.gaussians.size(); ++i) {
        EXPECT_EQ(0, std::memcmp(&res.scene.gaussians[i].mu, &before.gaussians[i].mu, 12));
        EXPECT_EQ(0, std::memcmp(&res.scene.gaussians[i].rot, &before.gaussians[i].rot, 16));
        EXPECT_EQ(0, std::memcmp(&res.scene.gaussians[i].scale, &before.gaussians[i].scale, 12));
    }
    EXPECT_EQ(0, std::memcmp(res.scene.deformation.params.data(), before.deformation.params.data(),
                             before.deformation.params.size() * 4));
    // Appearance did move.
    bool moved = false;
    for (std::size_t i = 0; i < before.gaussians.size(); ++i)
        moved |= std::memcmp(&res.scene.gaussians[i].color0, &before.gaussians[i].color0, 12) != 0;
    EXPECT_TRUE(moved);
}

TEST(TrainStyle, ZeroInitStartsAtRenderAndStaysLow) {
    // Targets are the geometry renders themselves: the zero-output MLPs make
    // the initial L1 exactly zero and a short run must not blow it up.
    Scene s = covered_scene(7, 12, 32);
    Dataset targets = render_dataset(s, 2);
    TrainConfig cfg;
    cfg.iterations_style = 100;
    cfg.seed = 13;
    TrainResult res = train_style(std::move(s), targets, cfg);
    EXPECT_LT(res.final_l1, 2e-3);
}

TEST(TrainStyle, FitsGlobalColorShift) {
    // Fully covered scene, targets shifted by a constant: a color/bias move
    // fits it; final L1 < 0.02.
    Scene s = covered_scene(8, 40, 32);
    Dataset targets = render_dataset(s, 2);
    for (TrainSample& t : targets)
        for (float& v : t.image.v) v = std::min(0.999f, v + 0.08f);
    TrainConfig cfg;
    cfg.iterations_style = 400;
    cfg.seed = 15;
    TrainResult res = train_style(std::move(s), targets, cfg);
    EXPECT_LT(res.final_l1, 0.02);
}

TEST(TrainStyle, MlpsFitAtLeastAsWellAsAblation) {
    Scene s = covered_scene(9, 16, 32);
    Dataset targets = render_dataset(s, 3);
    // Spatially varying recolor the appearance stage must chase.
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Image& img = targets[i].image;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                float wgt = 0.15f * std::sin(6.2831853f * float(x) / img.w);
                img.at(0, y, x) = std::clamp(img.at(0, y, x) + wgt, 0.0f, 1.0f);
                img.at(2, y, x) = std::clamp(img.at(2, y, x) - wgt, 0.0f, 1.0f);
            }
    }
    TrainConfig cfg;
    cfg.iterations_style = 250;
    cfg.seed = 17;
    TrainResult with_mlp = train_style(s, targets, cfg);
    TrainConfig ablated = cfg;
    ablated.use_style_mlps = false;
    TrainResult without = train_style(s, targets, ablated);
    EXPECT_LE(with_mlp.final_l1, without.final_l1 + 1e-6);
}

TEST(TrainStyle, MissingCameraIndexRejected) {
    Scene s = covered_scene(10, 4, 32);
    Dataset targets = render_dataset(s, 1);
    targets[0].cam_index = 99;
    EXPECT_THROW(train_style(std::move(s), targets, TrainConfig{}), ValidationError);
}
