#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "simpc/error.hpp"
#include "simpc/geometry.hpp"
#include "simpc/loss.hpp"
#include "simpc/network.hpp"

namespace simpc {

struct ShapeSpec {
    ShapeKind kind = ShapeKind::sphere;
    size_t n = 2048;
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double scale = 0.01;
};

struct RunConfig {
    // shapes
    std::vector<ShapeSpec> train_shapes{{ShapeKind::sphere, 2048}, {ShapeKind::torus, 2048}};
    std::vector<ShapeSpec> holdout_shapes{{ShapeKind::cube_surface, 2048}};
    // noise
    std::vector<NoiseSpec> train_noise{{NoiseKind::gaussian, 0.01}, {NoiseKind::gaussian, 0.02}};
    std::vector<NoiseSpec> eval_noise{{NoiseKind::gaussian, 0.01},
                                      {NoiseKind::gaussian, 0.02},
                                      {NoiseKind::gaussian, 0.03}};
    // train
    int epochs = 100;
    int batch = 16;  // patch pairs per optimizer step
    int substeps = 8;  // optimizer steps per (shape x noise spec) per epoch
    double lr = 1e-4;
    size_t patch_size = 96;
    uint64_t seed = 0;
    int checkpoint_interval = 20;
    size_t eval_points = 512;  // held-out subsample for the per-epoch eval
    // model
    net::Hyper hyper;
    // loss
    mpgm::LossMode loss_mode = mpgm::LossMode::simpc;
    double noise_delta_sigma = 0.01;
    size_t emd_cap = 2048;
    // ablate (reduced-budget sweeps)
    int ablate_epochs = 40;
    size_t ablate_patch = 96;
    int ablate_batch = 8;
    // theory
    size_t mc_samples = 100000;
    size_t moment_samples = 1000000;
    int moment_instances = 50;
    // paths
    std::string data_dir = "data";
    std::string checkpoint_dir = "ckpt";
    std::string report_dir = "report";
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

inline std::vector<ShapeSpec> parse_shapes(const std::string& v) {
    std::vector<ShapeSpec> out;
    for (const std::string& item : split(v, ',')) {
        if (item.empty()) continue;
        auto parts = split(item, ':');
        if (parts.size() != 2) throw ConfigError("bad shape spec '" + item + "', want kind:count");
        out.push_back({shape_kind_from(parts[0]), static_cast<size_t>(std::stoull(parts[1]))});
    }
    return out;
}

inline std::vector<NoiseSpec> parse_noise(const std::string& v) {
    std::vector<NoiseSpec> out;
    for (const std::string& item : split(v, ',')) {
        if (item.empty()) continue;
        auto parts = split(item, ':');
        if (parts.size() != 2) throw ConfigError("bad noise spec '" + item + "', want kind:scale");
        NoiseSpec ns{noise_kind_from(parts[0]), std::stod(parts[1])};
        if (!(ns.scale > 0.0)) throw ConfigError("noise scale must be positive in '" + item + "'");
        out.push_back(ns);
    }
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

} // namespace detail

inline void validate(const RunConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (cfg.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (cfg.substeps < 1) throw ConfigError("train.substeps must be >= 1");
    if (!(cfg.hyper.w2 > cfg.hyper.w1)) throw ConfigError("model.w2 must exceed model.w1");
    if (cfg.hyper.w1 != 1.0) throw ConfigError("model.w1 is fixed at 1");
    if (cfg.hyper.k < 1 || cfg.hyper.c < 4 || cfg.hyper.blocks < 1)
        throw ConfigError("model.k/c/l out of range");
    if (cfg.patch_size <= static_cast<size_t>(cfg.hyper.k) + 1)
        throw ConfigError("train.patch_size must exceed model.k + 1");
    if (cfg.train_shapes.empty() || cfg.train_noise.empty())
        throw ConfigError("training needs at least one shape and one noise spec");
}

// Flat sectioned key=value format. Unknown sections or keys are hard errors:
// a silently ignored hyperparameter typo is the main reproducibility hazard.
inline void apply_config_text(RunConfig& cfg, const std::string& text) {
    using Setter = std::function<void(RunConfig&, const std::string&)>;
    static const std::map<std::string, Setter> keys = {
        {"shapes.train", [](RunConfig& c, const std::string& v) { c.train_shapes = detail::parse_shapes(v); }},
        {"shapes.holdout", [](RunConfig& c, const std::string& v) { c.holdout_shapes = detail::parse_shapes(v); }},
        {"noise.train", [](RunConfig& c, const std::string& v) { c.train_noise = detail::parse_noise(v); }},
        {"noise.eval", [](RunConfig& c, const std::string& v) { c.eval_noise = detail::parse_noise(v); }},
        {"train.epochs", [](RunConfig& c, const std::string& v) { c.epochs = std::stoi(v); }},
        {"train.batch", [](RunConfig& c, const std::string& v) { c.batch = std::stoi(v); }},
        {"train.substeps", [](RunConfig& c, const std::string& v) { c.substeps = std::stoi(v); }},
        {"train.lr", [](RunConfig& c, const std::string& v) { c.lr = std::stod(v); }},
        {"train.patch_size", [](RunConfig& c, const std::string& v) { c.patch_size = std::stoull(v); }},
        {"train.seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
        {"train.checkpoint_interval",
         [](RunConfig& c, const std::string& v) { c.checkpoint_interval = std::stoi(v); }},
        {"train.eval_points", [](RunConfig& c, const std::string& v) { c.eval_points = std::stoull(v); }},
        {"model.k", [](RunConfig& c, const std::string& v) { c.hyper.k = std::stoi(v); }},
        {"model.c", [](RunConfig& c, const std::string& v) { c.hyper.c = std::stoi(v); }},
        {"model.l", [](RunConfig& c, const std::string& v) { c.hyper.blocks = std::stoi(v); }},
        {"model.encoder_layers",
         [](RunConfig& c, const std::string& v) { c.hyper.encoder_layers = std::stoi(v); }},
        {"model.max_step", [](RunConfig& c, const std::string& v) { c.hyper.max_step = std::stod(v); }},
        {"model.w1", [](RunConfig& c, const std::string& v) { c.hyper.w1 = std::stod(v); }},
        {"model.w2", [](RunConfig& c, const std::string& v) { c.hyper.w2 = std::stod(v); }},
        {"model.lambda_mpc", [](RunConfig& c, const std::string& v) { c.hyper.lambda_mpc = std::stod(v); }},
        {"model.mirror_nbr_in_input",
         [](RunConfig& c, const std::string& v) {
             c.hyper.mirror_nbr_in_input = detail::parse_bool(v, "model.mirror_nbr_in_input");
         }},
        {"loss.mode", [](RunConfig& c, const std::string& v) { c.loss_mode = mpgm::loss_mode_from(v); }},
        {"loss.noise_delta_sigma",
         [](RunConfig& c, const std::string& v) { c.noise_delta_sigma = std::stod(v); }},
        {"loss.emd_cap", [](RunConfig& c, const std::string& v) { c.emd_cap = std::stoull(v); }},
        {"ablate.epochs", [](RunConfig& c, const std::string& v) { c.ablate_epochs = std::stoi(v); }},
        {"ablate.patch_size", [](RunConfig& c, const std::string& v) { c.ablate_patch = std::stoull(v); }},
        {"ablate.batch", [](RunConfig& c, const std::string& v) { c.ablate_batch = std::stoi(v); }},
        {"theory.mc_samples", [](RunConfig& c, const std::string& v) { c.mc_samples = std::stoull(v); }},
        {"theory.moment_samples",
         [](RunConfig& c, const std::string& v) { c.moment_samples = std::stoull(v); }},
        {"theory.moment_instances",
         [](RunConfig& c, const std::string& v) { c.moment_instances = std::stoi(v); }},
        {"paths.data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"paths.checkpoint_dir", [](RunConfig& c, const std::string& v) { c.checkpoint_dir = v; }},
        {"paths.report_dir", [](RunConfig& c, const std::string& v) { c.report_dir = v; }},
    };

    std::istringstream in(text);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("bad section header at line " + std::to_string(line_no));
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(line_no));
        std::string key = detail::trim(t.substr(0, eq));
        std::string val = detail::trim(t.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        auto it = keys.find(full);
        if (it == keys.end()) throw ConfigError("unknown config key '" + full + "' at line " +
                                                std::to_string(line_no));
        try {
            it->second(cfg, val);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("bad value for '" + full + "': " + e.what());
        }
    }
    validate(cfg);
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig cfg;
    apply_config_text(cfg, ss.str());
    return cfg;
}

} // namespace simpc
