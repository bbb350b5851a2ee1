#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "msxt/dataset.hpp"
#include "msxt/model.hpp"
#include "msxt/span.hpp"
#include "msxt/tensor.hpp"

namespace msxt {

struct Candidate {
    std::size_t start = 0; // inclusive frame indices
    std::size_t end = 0;
    double score = 0.0;
};

// Candidate ranking: higher score, then earlier start, then shorter span.
inline bool candidate_better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end - a.start < b.end - b.start;
}

// Ranked span candidates for one query, best first.
struct PredictionSet {
    std::string clip_id;
    std::vector<Candidate> candidates;
};

// Enumerates every (s, e) with s <= e <= s + max_len - 1, scores it
// softmax(start)[s] * softmax(end)[e], and keeps the top k under the tie rule.
template <typename T>
PredictionSet decode_topk(const Tensor<T>& start_logits, const Tensor<T>& end_logits,
                          std::size_t k, std::size_t max_len);

// Intersection-over-union of inclusive frame intervals; 0 when disjoint.
double temporal_iou(const MomentSpan& a, const MomentSpan& b);

// Fraction of queries whose top-k candidates contain at least one with
// IoU >= threshold against the truth.
double recall_at_k(const std::vector<PredictionSet>& predictions,
                   const std::vector<MomentSpan>& truths, std::size_t k, double iou_threshold);

// Concatenates the two candidate lists, sorts by score with the tie rule
// (stable, so `a` wins exact duplicates), truncates to k. No deduplication.
PredictionSet ensemble_merge(const PredictionSet& a, const PredictionSet& b, std::size_t k);

// One evaluated query, carrying everything needed to score it later from a
// report file alone.
struct PredictionRecord {
    std::string clip_id;
    std::size_t query_idx = 0;
    std::vector<Candidate> candidates; // frame indices, best first
    MomentSpan truth;
    double fps_feature = 2.0;
    std::size_t n_frames = 0;
};

// The reported operating points: R@{1,5} at IoU {0.3, 0.5}.
struct RecallTable {
    double r1_iou03 = 0.0;
    double r1_iou05 = 0.0;
    double r5_iou03 = 0.0;
    double r5_iou05 = 0.0;
};

RecallTable recall_table(const std::vector<PredictionRecord>& records);

// Runs the model over a split in eval mode and decodes top-k spans per clip.
template <typename T>
std::vector<PredictionRecord> predict_split(const std::vector<ClipSample>& clips,
                                            const ModelWeights<T>& weights, const ModelConfig& cfg,
                                            std::size_t k_max = 5);

// Report-time conversion between frame indices and seconds. A span covers
// [start/fps, (end+1)/fps); span_from_report_seconds inverts it exactly for
// values produced by these two functions.
inline double frame_to_start_seconds(std::size_t start, double fps) {
    return double(start) / fps;
}
inline double frame_to_end_seconds(std::size_t end, double fps) { return double(end + 1) / fps; }
MomentSpan span_from_report_seconds(double start_s, double end_s, double fps);

// Prediction export: one JSON object per line with seconds-valued spans
// {clip_id, query_idx, fps_feature, n_frames, truth_s, candidates}. An
// optional single header line {"run_config": ...} carries provenance.
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records,
                       const std::string& header_json = "");
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
std::string read_predictions_header(const std::filesystem::path& path); // "" if absent

} // namespace msxt
