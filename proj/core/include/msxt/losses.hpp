#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "msxt/model.hpp"
#include "msxt/rng.hpp"
#include "msxt/span.hpp"
#include "msxt/tensor.hpp"

namespace msxt {

// How the per-sample contrastive losses are combined across a batch.
enum class NceReduction { kMean, kSum };

struct LossConfig {
    // Extension ratio for the highlight target: the span is widened on each
    // side by round(alpha * span_length) frames before building the 0/1 mask.
    double qgh_extension_alpha = 0.75;
    // Margin and pair count for the saliency ranking hinge.
    double saliency_margin = 0.2;
    std::size_t saliency_pairs = 4;
    NceReduction nce_reduction = NceReduction::kMean;
    // Ablation switch: false replaces the contrastive term with a constant 0.
    bool enable_nce = true;

    void validate() const; // throws ConfigError
};

// Frame-level supervision derived from a ground-truth span: positives are the
// in-span frames, negatives the rest of the clip, and extended_span is the
// widened interval used as the highlight target.
struct FrameLabelSet {
    MomentSpan span;
    std::size_t n_frames = 0;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    MomentSpan extended_span;

    // Throws ContractError unless span.start <= span.end < n_frames.
    static FrameLabelSet make(MomentSpan span, std::size_t n_frames, double alpha);
};

struct LossBreakdown {
    double span_loss = 0.0;
    double qgh_loss = 0.0;
    double npm_loss = 0.0;
    double saliency_loss = 0.0;
    double nce_loss = 0.0;
    double total = 0.0;
};

inline double total_loss(const LossBreakdown& parts) {
    return parts.span_loss + parts.qgh_loss + parts.npm_loss + parts.saliency_loss +
           parts.nce_loss;
}

// The five loss terms and their sum as graph nodes, so one backward() call
// covers every head.
template <typename T>
struct LossTerms {
    Tensor<T> span;
    Tensor<T> qgh;
    Tensor<T> npm;
    Tensor<T> saliency;
    Tensor<T> nce;
    Tensor<T> total;

    LossBreakdown breakdown() const {
        LossBreakdown b;
        b.span_loss = static_cast<double>(span.item());
        b.qgh_loss = static_cast<double>(qgh.item());
        b.npm_loss = static_cast<double>(npm.item());
        b.saliency_loss = static_cast<double>(saliency.item());
        b.nce_loss = static_cast<double>(nce.item());
        b.total = static_cast<double>(total.item());
        return b;
    }
};

// Mean over text tokens of temperature-scaled dot products: value-level
// helper (no graph), used for diagnostics and tests.
template <typename T>
double frame_text_similarity(const Tensor<T>& v, const Tensor<T>& text, double tau);

// InfoNCE over frames: each positive frame is an anchor scored against all
// negative frames of the same clip; log-sum-exp stabilized, averaged over
// anchors. No negatives -> 0 by convention.
template <typename T>
Tensor<T> frame_nce_loss(const Tensor<T>& projected_video, const Tensor<T>& projected_text,
                         const FrameLabelSet& labels, double tau);

// Mean of the start and end softmax cross-entropies at the true boundaries.
template <typename T>
Tensor<T> span_loss(const Tensor<T>& start_logits, const Tensor<T>& end_logits, MomentSpan span);

// BCE between highlight scores and the extended-span indicator, mean over frames.
template <typename T>
Tensor<T> qgh_loss(const Tensor<T>& highlight_scores, const FrameLabelSet& labels);

// Hinge max(0, margin + score(low) - score(high)) over sampled
// (high in positives, low in negatives) pairs. No negatives -> 0.
template <typename T>
Tensor<T> saliency_loss(const Tensor<T>& saliency_scores, const FrameLabelSet& labels,
                        double margin, std::size_t n_pairs, RngStream& rng);

// 1 for each segment whose frame interval intersects the span, else 0.
std::vector<std::uint8_t> segment_overlap_labels(std::size_t n_frames, std::size_t k,
                                                 MomentSpan span);

// BCE between per-segment keep scores and the overlap indicators, mean over segments.
template <typename T>
Tensor<T> npm_loss(const Tensor<T>& nil_scores, const std::vector<std::uint8_t>& overlap);

// All five terms for one sample plus their unit-weighted sum.
template <typename T>
LossTerms<T> compute_losses(const ForwardOutput<T>& out, const FrameLabelSet& labels,
                            const ModelConfig& mcfg, const LossConfig& lcfg,
                            RngStream& saliency_rng);

} // namespace msxt
