#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "msxt/evaluation.hpp"

// Batch subcommands behind the CLI binary, exposed as library calls so tests
// drive them in-process. Each throws the library error types; the binary maps
// those to exit codes.

namespace msxt {

struct GenerateOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir;
};

// Builds the synthetic dataset described by the config's dataset section and
// writes it (plus a verbatim copy of the config as run_config.json) to
// out_dir. Byte-identical for identical configs.
void cmd_generate(const GenerateOptions& opt);

struct TrainOptions {
    std::filesystem::path config;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
};

struct TrainSummary {
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint;
    RecallTable final_val;
    RecallTable best_val;
    std::size_t steps = 0;
};

// Trains on the dataset's train split, validating on val when present.
// Writes metrics.jsonl, run_config.json, and checkpoints under out_dir
// (train.checkpoint_dir in the config overrides the checkpoint location).
TrainSummary cmd_train(const TrainOptions& opt);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path data_dir;
    std::string split = "val";
    std::filesystem::path out_path;
    std::size_t k_max = 5;
};

// Decodes top-k spans for every clip of the split, writes predictions JSONL
// (header line carries the checkpoint's model config), prints the metric
// table to `table_out`, and returns it.
RecallTable cmd_eval(const EvalOptions& opt, std::ostream& table_out);

struct EnsembleOptions {
    std::filesystem::path pred_a;
    std::filesystem::path pred_b;
    std::filesystem::path out_path;
    std::size_t k = 5;
};

// Merges two prediction files over the same query set (concatenate, sort,
// keep k), writes the merged JSONL, prints and returns the metric table.
RecallTable cmd_ensemble(const EnsembleOptions& opt, std::ostream& table_out);

struct AugmentPreviewOptions {
    std::filesystem::path config;
    std::filesystem::path data_dir;
    std::size_t n = 10;
};

// Emits one JSON line per preview draw: spans and lengths before and after
// the configured augmentation, cycling through the train split.
void cmd_augment_preview(const AugmentPreviewOptions& opt, std::ostream& out);

// Four-cell metric grid, fixed layout: {R@1, R@5} x {IoU 0.3, 0.5}.
void print_metric_table(const RecallTable& table, std::ostream& out);

} // namespace msxt
