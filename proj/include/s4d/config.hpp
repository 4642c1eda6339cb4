// Copyright Contributors to the s4d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "s4d/core.hpp"
#include "s4d/losses.hpp"
#include "s4d/optim.hpp"
#include "s4d/stylizer.hpp"
#include "s4d/synth.hpp"

namespace s4d {

// Flat key=value configuration with [section] headers; '#' starts a comment.
struct PipelineConfig {
    std::uint64_t seed = 1;
    int threads = 0;
    std::string data_dir; // empty: synthesize

    SynthSpec synth;
    std::string synth_motion = "orbit";

    TrainConfig geom;   // geometry-stage iterations/lrs
    TrainConfig style;  // style-stage iterations/lrs

    StylizeOptions stylize;

    double helix_radius = 3.0;
    double helix_turns = 1.0;
    int helix_frames = 60;
    double helix_z0 = -0.3;
    double helix_z1 = 0.3;

    PipelineConfig() {
        style.iterations_style = 10000;
        geom.iterations_geom = 4000;
    }
};

namespace detail {

template <class F>
void visit_config(PipelineConfig& c, F&& f) {
    f("seed", c.seed);
    f("threads", c.threads);
    f("data.dir", c.data_dir);
    f("synth.n_gaussians", c.synth.n_gaussians);
    f("synth.n_cameras", c.synth.n_cameras);
    f("synth.n_times", c.synth.n_times);
    f("synth.resolution", c.synth.resolution);
    f("synth.motion", c.synth_motion);
    f("synth.palette_seed", c.synth.palette_seed);
    f("geom.iterations", c.geom.iterations_geom);
    f("geom.batch_size", c.geom.batch_size);
    f("geom.lr_init", c.geom.lr_init);
    f("geom.lr_final", c.geom.lr_final);
    f("geom.lr_delay_mult", c.geom.lr_delay_mult);
    f("geom.lr_delay_steps", c.geom.lr_delay_steps);
    f("geom.lr_position", c.geom.lr_position);
    f("geom.lr_rotation", c.geom.lr_rotation);
    f("geom.lr_scale", c.geom.lr_scale);
    f("geom.lr_opacity", c.geom.lr_opacity);
    f("geom.lr_color", c.geom.lr_color);
    f("geom.lr_deform", c.geom.lr_deform);
    f("geom.checkpoint_every", c.geom.checkpoint_every);
    f("style.iterations", c.style.iterations_style);
    f("style.batch_size", c.style.batch_size);
    f("style.lr_init", c.style.lr_init);
    f("style.lr_final", c.style.lr_final);
    f("style.lr_delay_mult", c.style.lr_delay_mult);
    f("style.lr_delay_steps", c.style.lr_delay_steps);
    f("style.lr_opacity", c.style.lr_opacity);
    f("style.lr_color", c.style.lr_color);
    f("style.use_mlps", c.style.use_style_mlps);
    f("style.checkpoint_every", c.style.checkpoint_every);
    f("stylize.iterations", c.stylize.iterations);
    f("stylize.step_size", c.stylize.step_size);
    f("stylize.id_iterations", c.stylize.id_iterations);
    f("stylize.lambda_consistency", c.stylize.weights.consistency);
    f("stylize.lambda_style", c.stylize.weights.style);
    f("stylize.lambda_id", c.stylize.weights.id);
    f("stylize.lambda_illum", c.stylize.weights.illum);
    f("stylize.lambda_ins", c.stylize.weights.ins);
    f("stylize.tau", c.stylize.weights.tau);
    f("stylize.n_samples", c.stylize.weights.n_samples);
    f("stylize.illum_sigma", c.stylize.weights.illum_sigma);
    f("render.helix_radius", c.helix_radius);
    f("render.helix_turns", c.helix_turns);
    f("render.helix_frames", c.helix_frames);
    f("render.helix_z0", c.helix_z0);
    f("render.helix_z1", c.helix_z1);
}

inline std::string config_value_to_string(const std::string& v) { return v; }
inline std::string config_value_to_string(bool v) { return v ? "true" : "false"; }
inline std::string config_value_to_string(int v) { return std::to_string(v); }
inline std::string config_value_to_string(std::uint64_t v) { return std::to_string(v); }
inline std::string config_value_to_string(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void config_value_from_string(const std::string& s, std::string& out) { out = s; }
inline void config_value_from_string(const std::string& s, bool& out) {
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else throw ValidationError("expected a boolean, got '" + s + "'");
}
inline void config_value_from_string(const std::string& s, int& out) {
    std::size_t used = 0;
    out = std::stoi(s, &used);
    require(used == s.size(), "expected an integer, got '" + s + "'");
}
inline void config_value_from_string(const std::string& s, std::uint64_t& out) {
    std::size_t used = 0;
    out = std::stoull(s, &used);
    require(used == s.size(), "expected an integer, got '" + s + "'");
}
inline void config_value_from_string(const std::string& s, double& out) {
    std::size_t used = 0;
    out = std::stod(s, &used);
    require(used == s.size(), "expected a number, got '" + s + "'");
}

} // namespace detail

// Canonical text form, grouped by section, parseable by parse_config.
inline std::string dump_config(PipelineConfig cfg = {}) {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    detail::visit_config(cfg, [&](const std::string& key, auto& value) {
        auto dot = key.find('.');
        std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        sections[section].push_back({name, detail::config_value_to_string(value)});
    });
    std::ostringstream out;
    for (const auto& [name, value] : sections[""]) out << name << " = " << value << "\n";
    for (const auto& [section, entries] : sections) {
        if (section.empty()) continue;
        out << "\n[" << section << "]\n";
        for (const auto& [name, value] : entries) out << name << " = " << value << "\n";
    }
    return out.str();
}

inline PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "config line " + std::to_string(lineno) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        require(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
        kv[section.empty() ? key : section + "." + key] = value;
    }

    std::map<std::string, bool> known;
    detail::visit_config(cfg, [&](const std::string& key, auto& value) {
        known[key] = true;
        auto it = kv.find(key);
        if (it == kv.end()) return;
        try {
            detail::config_value_from_string(it->second, value);
        } catch (const std::exception& e) {
            throw ValidationError("config key '" + key + "': " + e.what());
        }
    });
    for (const auto& [key, value] : kv)
        require(known.count(key), "unknown config key '" + key + "'");

    cfg.synth.motion = motion_from_string(cfg.synth_motion);
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------- manifest

// Written before any artifact. Identical manifests imply identical outputs.
inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const PipelineConfig& cfg,
                           const std::map<std::string, std::string>& input_hashes,
                           const std::vector<std::string>& artifacts) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["tool"] = "s4d";
    j["tool_version"] = 1;
    j["command"] = command;
    PipelineConfig copy = cfg;
    j["config"] = dump_config(copy);
    j["seed"] = cfg.seed;
    nlohmann::ordered_json hashes;
    for (const auto& [k, v] : input_hashes) hashes[k] = v;
    j["input_hashes"] = hashes;
    j["artifacts"] = artifacts;
    std::ofstream f(out_dir + "/manifest_" + command + ".json", std::ios::binary);
    require(f.good(), "cannot write manifest in " + out_dir);
    f << j.dump(2) << "\n";
}

inline std::string hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) h = fnv1a64(buf, std::size_t(f.gcount()), h);
    return hex64(h);
}

} // namespace s4d
