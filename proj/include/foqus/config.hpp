#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "foqus/dataset.hpp"
#include "foqus/nn.hpp"
#include "foqus/selection.hpp"

namespace foqus {

/// One experiment grid. Model frame_len and num_classes are bound from the
/// dataset at run time (see bind_models).
struct ExperimentConfig {
    DatasetSpec dataset;
    /// Load this dataset file instead of generating `dataset`.
    std::optional<std::string> dataset_path;
    ModelSpec select_model;
    ModelSpec eval_model;
    TrainConfig record;
    TrainConfig retrain;
    std::vector<Method> methods = all_methods();
    std::vector<double> rates{0.01, 0.05, 0.10, 0.20, 0.30};
    int repeats = 3;
    std::uint64_t seed = 0;
    double beta = kDefaultBeta;
    TierProportions tiers{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    bool class_balanced = true;
    bool snr_stratified = false;
    double ablation_rate = 0.01;
    /// Run grid cells concurrently.
    bool parallel_cells = true;

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Copies frame_len and class count from the dataset into both model specs.
void bind_models(ExperimentConfig& cfg, const Dataset& d);

/// Parses JSON config text. Missing keys take defaults; unknown keys and type
/// errors are rejected with the key path ("config.rates[2]: ...").
ExperimentConfig parse_config(const std::string& text);

/// Loads a config file. The name "default" loads the built-in default config.
ExperimentConfig load_config(const std::string& path_or_name);

/// Complete JSON form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Text of configs/default.json.
const std::string& default_config_text();

}  // namespace foqus
