#pragma once

#include <filesystem>
#include <string>

#include "msxt/dataset.hpp"
#include "msxt/model.hpp"
#include "msxt/training.hpp"

namespace msxt {

struct EvalConfig {
    std::size_t k_max = 5;  // candidates kept per query; ensembling keeps the same count

    void validate() const;  // throws ConfigError
};

// Whole-run configuration, serialized as one JSON document with sections
// {model, train, augment, dataset, eval}. The augment section fills
// train.augment, so TrainConfig stays self-contained in memory. Unknown keys
// at any level are rejected; missing keys keep their defaults.
struct RunConfig {
    RunConfig();  // dataset defaults to the 500/100/100 synthetic layout

    ModelConfig model;
    TrainConfig train;
    DatasetConfig dataset;
    EvalConfig eval;

    void validate() const;
};

// Parse + validate; ConfigError messages name the offending key path.
RunConfig parse_run_config(const std::string& json_text);
// IoError when the file is missing or unreadable; ConfigError otherwise.
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical form: lexicographically sorted keys, two-space indent, trailing
// newline. parse(run_config_to_json(c)) round-trips exactly.
std::string run_config_to_json(const RunConfig& cfg);

// Model-config-only round-trip, used by the checkpoint format.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

} // namespace msxt
