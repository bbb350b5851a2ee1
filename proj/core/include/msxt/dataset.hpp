#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msxt/rng.hpp"
#include "msxt/span.hpp"
#include "msxt/tensor.hpp"

namespace msxt {

// One clip: video feature rows, text token rows, and the ground-truth span in
// feature-frame indices. Features are stored as f32, the on-disk precision.
struct ClipSample {
    std::string clip_id;
    Tensor<float> video_features; // [n_frames x d_video]
    Tensor<float> text_features;  // [n_tokens x d_text]
    MomentSpan span;
    double fps_feature = 2.0; // feature rows per second, metadata only

    std::size_t n_frames() const { return video_features.dim(0); }
    std::size_t n_tokens() const { return text_features.dim(0); }

    void validate() const; // throws ContractError
};

// Synthetic clip generator settings. In-span frames carry a planted
// text-conditioned signal of strength snr; snr = 0 makes the task unlearnable
// by construction (sanity control).
struct GeneratorConfig {
    std::uint64_t seed = 1;
    double snr = 1.0;
    std::size_t d_video = 32;
    std::size_t d_text = 24;
    std::size_t clip_len_lo = 96;
    std::size_t clip_len_hi = 160;
    std::size_t span_len_lo = 8;
    std::size_t span_len_hi = 24;
    std::size_t text_len_lo = 4;
    std::size_t text_len_hi = 12;
    double fps_feature = 2.0;

    void validate() const; // throws ConfigError
};

// Deterministic generator: the seed fixes a d_video x d_text mixing matrix M
// once, and clip `index` is a pure function of (seed, index). In-span frames
// are snr * (M q) + noise where q is the clip's mean text token.
class ClipGenerator {
  public:
    explicit ClipGenerator(GeneratorConfig cfg);

    ClipSample generate(std::size_t index) const;

    const GeneratorConfig& config() const { return cfg_; }
    // Mixing matrix, row-major [d_video x d_text]; exposed for oracle checks.
    const std::vector<float>& mixing() const { return mixing_; }

  private:
    GeneratorConfig cfg_;
    RngTree tree_;
    std::vector<float> mixing_;
};

struct DatasetConfig {
    GeneratorConfig generator;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;

    void validate() const; // throws ConfigError
};

// Clip serials are global across splits (train, then val, then test) so every
// clip in a dataset is distinct.
std::map<std::string, std::vector<ClipSample>> build_dataset(const DatasetConfig& cfg);

struct ClipRecord {
    std::string clip_id;
    std::string file; // packed split file, relative to the dataset directory
    std::uint64_t offset = 0;
    std::uint64_t size = 0;
    std::size_t n_frames = 0;
    std::size_t n_tokens = 0;
    MomentSpan span;
    double fps_feature = 2.0;
    std::uint64_t checksum = 0; // FNV-1a over the clip's packed bytes
};

struct DatasetManifest {
    std::uint32_t version = 1;
    std::size_t d_video = 0;
    std::size_t d_text = 0;
    std::map<std::string, std::vector<ClipRecord>> splits;
    // Present when the dataset was produced by build_dataset; ingested
    // datasets of externally extracted features omit it.
    std::optional<DatasetConfig> config;
};

// Writes packed per-split feature files ("<split>.clpf") plus manifest.json
// into `dir` (created if missing). Round-trips bitwise.
DatasetManifest write_dataset(const std::map<std::string, std::vector<ClipSample>>& splits,
                              const std::filesystem::path& dir,
                              const std::optional<DatasetConfig>& cfg);

DatasetManifest read_manifest(const std::filesystem::path& dir);

// Throws IoError naming the offending clip on truncation, shape mismatch, or
// checksum failure.
std::vector<ClipSample> read_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                                   const std::string& split);

std::map<std::string, std::vector<ClipSample>> read_dataset(const std::filesystem::path& dir);

// Converts an annotated time range to an inclusive frame span:
// s = floor(t_start * fps), e = max(s, ceil(t_end * fps) - 1), both clamped
// to [0, n_frames).
MomentSpan seconds_to_frames(double t_start, double t_end, double fps_feature,
                             std::size_t n_frames);

} // namespace msxt
