#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "changeforge/errors.hpp"
#include "changeforge/evalkit.hpp"
#include "changeforge/translation.hpp"

namespace changeforge {

struct DetectorConfig {
    int sample_stride = 1;
    int radius = 1;
    double shrinkage_scale = 1e-6;
    double percentile = 95.0;

    void validate() const {
        if (sample_stride < 1) throw config_error("detector sample_stride must be positive");
        if (radius < 0) throw config_error("detector radius must be nonnegative");
        if (shrinkage_scale < 0) throw config_error("shrinkage_scale must be nonnegative");
        if (percentile < 0 || percentile > 100)
            throw config_error("detector percentile must lie in [0, 100]");
    }
};

/// Whole-pipeline settings; one master seed feeds every stage through the
/// named rng-purpose scheme. Serializes to a canonical JSON form that
/// round-trips byte-identically.
struct PipelineConfig {
    std::string dataset_x;
    std::string dataset_y;
    std::string out_dir = "out";
    std::uint64_t seed = 17;
    TrainConfig train;
    DetectorConfig detector;
    std::vector<double> eval_percentiles = default_percentile_grid();

    void validate(bool check_paths = true) const {
        train.validate();
        detector.validate();
        if (eval_percentiles.empty()) throw config_error("eval_percentiles is empty");
        for (std::size_t i = 0; i < eval_percentiles.size(); ++i) {
            if (eval_percentiles[i] < 0 || eval_percentiles[i] >= 100)
                throw config_error("eval percentiles must lie in [0, 100)");
            if (i > 0 && eval_percentiles[i] <= eval_percentiles[i - 1])
                throw config_error("eval percentiles must be strictly increasing");
        }
        if (check_paths) {
            for (const std::string& p : {dataset_x, dataset_y})
                if (!p.empty() && !std::filesystem::exists(p))
                    throw config_error("referenced path does not exist: " + p);
        }
    }
};

inline nlohmann::ordered_json to_json(const PipelineConfig& cfg) {
    nlohmann::ordered_json j;
    j["dataset_x"] = cfg.dataset_x;
    j["dataset_y"] = cfg.dataset_y;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["train"] = {{"lambda_cyc", cfg.train.lambda_cyc},
                  {"epochs", cfg.train.epochs},
                  {"decay_start_epoch", cfg.train.decay_start_epoch},
                  {"lr", cfg.train.lr},
                  {"batch_size", cfg.train.batch_size},
                  {"patch_size", cfg.train.patch_size},
                  {"adversarial_mode", to_string(cfg.train.mode)},
                  {"replay_capacity", cfg.train.replay_capacity},
                  {"identity_weight", cfg.train.identity_weight},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"augment_flips", cfg.train.augment_flips},
                  {"base_width", cfg.train.base_width},
                  {"n_res", cfg.train.n_res},
                  {"d_layers", cfg.train.d_layers}};
    j["detector"] = {{"sample_stride", cfg.detector.sample_stride},
                     {"radius", cfg.detector.radius},
                     {"shrinkage_scale", cfg.detector.shrinkage_scale},
                     {"percentile", cfg.detector.percentile}};
    j["eval_percentiles"] = cfg.eval_percentiles;
    return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& dst) {
    if (j.contains(key)) {
        try {
            dst = j.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("bad config field '") + key + "': " + e.what());
        }
    }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const char* where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw config_error(std::string("unknown config key '") + key + "' in " + where);
    }
}

} // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw config_error("config root must be a JSON object");
    detail::reject_unknown(
        j, {"dataset_x", "dataset_y", "out_dir", "seed", "train", "detector",
            "eval_percentiles"},
        "config root");
    PipelineConfig cfg;
    detail::read_field(j, "dataset_x", cfg.dataset_x);
    detail::read_field(j, "dataset_y", cfg.dataset_y);
    detail::read_field(j, "out_dir", cfg.out_dir);
    detail::read_field(j, "seed", cfg.seed);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t,
                               {"lambda_cyc", "epochs", "decay_start_epoch", "lr", "batch_size",
                                "patch_size", "adversarial_mode", "replay_capacity",
                                "identity_weight", "checkpoint_every", "augment_flips",
                                "base_width", "n_res", "d_layers"},
                               "train block");
        detail::read_field(t, "lambda_cyc", cfg.train.lambda_cyc);
        detail::read_field(t, "epochs", cfg.train.epochs);
        detail::read_field(t, "decay_start_epoch", cfg.train.decay_start_epoch);
        detail::read_field(t, "lr", cfg.train.lr);
        detail::read_field(t, "batch_size", cfg.train.batch_size);
        detail::read_field(t, "patch_size", cfg.train.patch_size);
        if (t.contains("adversarial_mode"))
            cfg.train.mode =
                adversarial_mode_from_string(t.at("adversarial_mode").get<std::string>());
        detail::read_field(t, "replay_capacity", cfg.train.replay_capacity);
        detail::read_field(t, "identity_weight", cfg.train.identity_weight);
        detail::read_field(t, "checkpoint_every", cfg.train.checkpoint_every);
        detail::read_field(t, "augment_flips", cfg.train.augment_flips);
        detail::read_field(t, "base_width", cfg.train.base_width);
        detail::read_field(t, "n_res", cfg.train.n_res);
        detail::read_field(t, "d_layers", cfg.train.d_layers);
    }
    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        detail::reject_unknown(d, {"sample_stride", "radius", "shrinkage_scale", "percentile"},
                               "detector block");
        detail::read_field(d, "sample_stride", cfg.detector.sample_stride);
        detail::read_field(d, "radius", cfg.detector.radius);
        detail::read_field(d, "shrinkage_scale", cfg.detector.shrinkage_scale);
        detail::read_field(d, "percentile", cfg.detector.percentile);
    }
    detail::read_field(j, "eval_percentiles", cfg.eval_percentiles);
    cfg.train.seed = cfg.seed;
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("malformed config " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j);
}

inline void save_pipeline_config(const PipelineConfig& cfg,
                                 const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw config_error("cannot write config " + path.string());
    f << to_json(cfg).dump(2) << "\n";
    if (!f) throw config_error("failed writing config " + path.string());
}

} // namespace changeforge
