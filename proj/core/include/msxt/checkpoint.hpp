#pragma once

#include <filesystem>

#include "msxt/model.hpp"

namespace msxt {

template <class T>
struct Checkpoint {
    ModelConfig config;
    ModelWeights<T> weights;
};

// Binary snapshot: "MSXT" magic, format version, the model config as JSON,
// every learnable parameter in declaration order (name, shape, f32 values,
// little-endian), and a trailing FNV-1a checksum over the preceding bytes.
// The optimizer keeps parameters exactly f32-representable, so the f32
// encoding is lossless and save -> load -> forward is bitwise stable even in
// double mode. The positional table is rebuilt from the config on load.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelWeights<T>& weights);

// IoError on missing/corrupt files; the message names the first mismatch.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

} // namespace msxt
