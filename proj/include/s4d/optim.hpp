// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "s4d/core.hpp"

namespace s4d {

struct TrainConfig {
    int iterations_geom = 4000;
    int iterations_style = 10000;
    int batch_size = 2;
    double lr_init = 1e-4;
    double lr_final = 1e-5;
    double lr_delay_mult = 0.02;
    int lr_delay_steps = 0;
    std::uint64_t seed = 1;
    int checkpoint_every = 0; // 0: only at stage end
    // Per-group learning rates for the scene parameters; the shared schedule
    // shape below scales each by lr_at(step)/lr_init.
    double lr_position = 2e-3;
    double lr_rotation = 2e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-2;
    double lr_deform = 2e-3;
    bool use_style_mlps = true; // ablation flag: --no-style-mlp clears it
};

inline void validate(const TrainConfig& c) {
    require(c.iterations_geom >= 1 && c.iterations_style >= 1, "iteration counts must be >= 1");
    require(c.batch_size >= 1, "batch size must be >= 1");
    require(c.lr_final <= c.lr_init, "lr_final must not exceed lr_init");
    require(c.lr_init > 0 && c.lr_final > 0, "learning rates must be positive");
    require(c.lr_delay_steps >= 0, "lr_delay_steps must be >= 0");
}

// Log-linear decay from lr_init to lr_final over `total` steps, times a
// delayed warmup factor delay_mult + (1-delay_mult)*sin(pi/2 * clamp(step/delay_steps)).
// Endpoints return the configured rates exactly.
inline double lr_at(int step, int total, double lr_init, double lr_final, double delay_mult,
                    int delay_steps) {
    double base;
    if (step <= 0) base = lr_init;
    else if (step >= total) base = lr_final;
    else {
        double t = double(step) / double(total);
        base = std::exp((1.0 - t) * std::log(lr_init) + t * std::log(lr_final));
    }
    double factor = 1.0;
    if (delay_steps > 0) {
        double u = std::min(1.0, std::max(0.0, double(step) / double(delay_steps)));
        factor = delay_mult + (1.0 - delay_mult) * std::sin(1.5707963267948966 * u);
    }
    return base * factor;
}

inline double lr_at(int step, int total, const TrainConfig& cfg) {
    return lr_at(step, total, cfg.lr_init, cfg.lr_final, cfg.lr_delay_mult, cfg.lr_delay_steps);
}

// ---------------------------------------------------------------- adam

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
};

// Standard bias-corrected Adam update, in place.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& st, double lr, const std::string& group_name = "params",
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    require(params.size() == grads.size(), "adam_step: shape mismatch for " + group_name);
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    require(st.m.size() == params.size(), "adam_step: state shape mismatch for " + group_name);
    for (double g : grads)
        require_numeric(std::isfinite(g), "adam_step: non-finite gradient in group " + group_name);
    st.step += 1;
    double bc1 = 1.0 - std::pow(beta1, double(st.step));
    double bc2 = 1.0 - std::pow(beta2, double(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        params[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
    }
}

// ---------------------------------------------------------------- sidecar

struct AdamGroupSnapshot {
    std::string name;
    std::vector<double> values;
    AdamState state;
};

// "S4DA" | u32 version | u64 group count | per group: name, sizes, masters,
// first and second moments.
inline void save_adam_sidecar(const std::vector<AdamGroupSnapshot>& groups,
                              const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for write: " + path);
    f.write("S4DA", 4);
    std::uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    std::uint64_t n = groups.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& g : groups) {
        std::uint32_t len = std::uint32_t(g.name.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(g.name.data(), len);
        std::uint64_t cnt = g.values.size();
        std::int64_t step = g.state.step;
        f.write(reinterpret_cast<const char*>(&cnt), 8);
        f.write(reinterpret_cast<const char*>(&step), 8);
        f.write(reinterpret_cast<const char*>(g.values.data()), std::streamsize(cnt * 8));
        f.write(reinterpret_cast<const char*>(g.state.m.data()), std::streamsize(cnt * 8));
        f.write(reinterpret_cast<const char*>(g.state.v.data()), std::streamsize(cnt * 8));
    }
    require(f.good(), "write failed: " + path);
}

inline std::vector<AdamGroupSnapshot> load_adam_sidecar(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    require(f.gcount() == 4 && std::memcmp(magic, "S4DA", 4) == 0, "not an adam sidecar: " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    require(version == 1, "adam sidecar version mismatch: " + path);
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    require(f.good() && n < 1024, "bad adam sidecar group count: " + path);
    std::vector<AdamGroupSnapshot> out(n);
    for (auto& g : out) {
        std::uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        require(f.good() && len < 256, "bad group name length: " + path);
        g.name.resize(len);
        f.read(g.name.data(), len);
        std::uint64_t cnt = 0;
        std::int64_t step = 0;
        f.read(reinterpret_cast<char*>(&cnt), 8);
        f.read(reinterpret_cast<char*>(&step), 8);
        require(f.good() && cnt < (1ull << 30), "bad group size: " + path);
        g.values.resize(cnt);
        g.state.m.resize(cnt);
        g.state.v.resize(cnt);
        g.state.step = step;
        f.read(reinterpret_cast<char*>(g.values.data()), std::streamsize(cnt * 8));
        f.read(reinterpret_cast<char*>(g.state.m.data()), std::streamsize(cnt * 8));
        f.read(reinterpret_cast<char*>(g.state.v.data()), std::streamsize(cnt * 8));
        require(f.good(), "truncated adam sidecar: " + path);
    }
    return out;
}

} // namespace s4d
