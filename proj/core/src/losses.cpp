#include "msxt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "msxt/errors.hpp"
#include "msxt/ops.hpp"

namespace msxt {

void LossConfig::validate() const {
    if (qgh_extension_alpha < 0.0)
        throw ConfigError("loss config: qgh_extension_alpha must be >= 0");
    if (saliency_margin < 0.0) throw ConfigError("loss config: saliency_margin must be >= 0");
}

FrameLabelSet FrameLabelSet::make(MomentSpan span, std::size_t n_frames, double alpha) {
    if (n_frames == 0) throw ContractError("frame labels: n_frames must be positive");
    if (span.start > span.end)
        throw ContractError("frame labels: span start " + std::to_string(span.start) +
                            " exceeds end " + std::to_string(span.end));
    if (span.end >= n_frames)
        throw ContractError("frame labels: span end " + std::to_string(span.end) +
                            " out of range for " + std::to_string(n_frames) + " frames");
    if (alpha < 0.0) throw ContractError("frame labels: alpha must be >= 0");

    FrameLabelSet ls;
    ls.span = span;
    ls.n_frames = n_frames;
    ls.positives.reserve(span_length(span));
    ls.negatives.reserve(n_frames - span_length(span));
    for (std::size_t i = 0; i < n_frames; ++i) {
        if (i >= span.start && i <= span.end)
            ls.positives.push_back(i);
        else
            ls.negatives.push_back(i);
    }
    const auto ext = static_cast<std::size_t>(std::llround(alpha * double(span_length(span))));
    ls.extended_span.start = span.start >= ext ? span.start - ext : 0;
    ls.extended_span.end = std::min(n_frames - 1, span.end + ext);
    return ls;
}

namespace {

template <typename T>
void check_projection_pair(const Tensor<T>& video, const Tensor<T>& text) {
    if (video.rank() != 2 || text.rank() != 2)
        throw ShapeError("contrastive features must be rank-2, got " + shape_str(video.shape()) +
                         " and " + shape_str(text.shape()));
    if (video.dim(1) != text.dim(1))
        throw ShapeError("contrastive feature widths differ: " + shape_str(video.shape()) +
                         " vs " + shape_str(text.shape()));
}

template <typename T>
void check_frame_scores(const Tensor<T>& scores, std::size_t n_frames, const char* what) {
    if (scores.rank() != 1 || scores.dim(0) != n_frames)
        throw ShapeError(std::string(what) + ": expected [" + std::to_string(n_frames) +
                         "] scores, got " + shape_str(scores.shape()));
}

} // namespace

template <typename T>
double frame_text_similarity(const Tensor<T>& v, const Tensor<T>& text, double tau) {
    if (v.rank() != 1)
        throw ShapeError("frame_text_similarity: frame vector must be rank-1, got " +
                         shape_str(v.shape()));
    if (text.rank() != 2 || text.dim(1) != v.dim(0))
        throw ShapeError("frame_text_similarity: token matrix " + shape_str(text.shape()) +
                         " incompatible with frame vector " + shape_str(v.shape()));
    if (text.dim(0) == 0) throw ContractError("frame_text_similarity: no text tokens");
    if (!(tau > 0.0)) throw ContractError("frame_text_similarity: tau must be positive");

    const std::size_t lt = text.dim(0);
    const std::size_t d = v.dim(0);
    double acc = 0.0;
    for (std::size_t j = 0; j < lt; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            dot += double(v.value()[c]) * double(text.value()[j * d + c]);
        acc += dot / tau;
    }
    return acc / double(lt);
}

template <typename T>
Tensor<T> frame_nce_loss(const Tensor<T>& projected_video, const Tensor<T>& projected_text,
                         const FrameLabelSet& labels, double tau) {
    check_projection_pair(projected_video, projected_text);
    if (projected_video.dim(0) != labels.n_frames)
        throw ContractError("frame_nce_loss: labels cover " + std::to_string(labels.n_frames) +
                            " frames but features have " + std::to_string(projected_video.dim(0)));
    if (projected_text.dim(0) == 0) throw ContractError("frame_nce_loss: no text tokens");
    if (!(tau > 0.0)) throw ContractError("frame_nce_loss: tau must be positive");
    if (labels.positives.empty()) throw ContractError("frame_nce_loss: no positive frames");
    for (std::size_t i : labels.positives)
        if (i >= labels.n_frames) throw ContractError("frame_nce_loss: positive index out of range");
    for (std::size_t i : labels.negatives)
        if (i >= labels.n_frames) throw ContractError("frame_nce_loss: negative index out of range");
    if (labels.negatives.empty()) return Tensor<T>::scalar(T(0));

    const std::size_t lt = projected_text.dim(0);
    // f[i] = mean_j <v_i, t_j> / tau, one similarity per frame.
    auto sims = matmul(projected_video, transpose_last2(projected_text));
    auto f = scale(sum_axis(sims, 1), T(1.0 / (tau * double(lt))));
    auto neg = gather_rows(f, labels.negatives);

    Tensor<T> acc;
    for (std::size_t p : labels.positives) {
        auto fp = pick(f, p);
        auto lse = logsumexp_lastdim(concat(std::vector<Tensor<T>>{fp, neg}, 0));
        auto term = sub(lse, fp);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, T(1.0 / double(labels.positives.size())));
}

template <typename T>
Tensor<T> span_loss(const Tensor<T>& start_logits, const Tensor<T>& end_logits, MomentSpan span) {
    if (start_logits.rank() != 1 || end_logits.rank() != 1 ||
        start_logits.dim(0) != end_logits.dim(0))
        throw ShapeError("span_loss: logits must be rank-1 of equal length, got " +
                         shape_str(start_logits.shape()) + " and " + shape_str(end_logits.shape()));
    if (span.start > span.end || span.end >= start_logits.dim(0))
        throw ContractError("span_loss: span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + "] out of range for " +
                            std::to_string(start_logits.dim(0)) + " frames");

    auto start_ce = sub(logsumexp_lastdim(start_logits), pick(start_logits, span.start));
    auto end_ce = sub(logsumexp_lastdim(end_logits), pick(end_logits, span.end));
    return scale(add(start_ce, end_ce), T(0.5));
}

template <typename T>
Tensor<T> qgh_loss(const Tensor<T>& highlight_scores, const FrameLabelSet& labels) {
    check_frame_scores(highlight_scores, labels.n_frames, "qgh_loss");
    std::vector<T> targets(labels.n_frames, T(0));
    for (std::size_t i = labels.extended_span.start; i <= labels.extended_span.end; ++i)
        targets[i] = T(1);
    return binary_cross_entropy(highlight_scores, targets);
}

template <typename T>
Tensor<T> saliency_loss(const Tensor<T>& saliency_scores, const FrameLabelSet& labels,
                        double margin, std::size_t n_pairs, RngStream& rng) {
    check_frame_scores(saliency_scores, labels.n_frames, "saliency_loss");
    if (labels.positives.empty()) throw ContractError("saliency_loss: no positive frames");
    if (margin < 0.0) throw ContractError("saliency_loss: margin must be >= 0");
    if (labels.negatives.empty() || n_pairs == 0) return Tensor<T>::scalar(T(0));

    Tensor<T> acc;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const std::size_t hi =
            labels.positives[std::size_t(rng.next_int(0, std::int64_t(labels.positives.size()) - 1))];
        const std::size_t lo =
            labels.negatives[std::size_t(rng.next_int(0, std::int64_t(labels.negatives.size()) - 1))];
        auto gap = affine(sub(pick(saliency_scores, lo), pick(saliency_scores, hi)), T(1), T(margin));
        auto term = relu(gap);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, T(1.0 / double(n_pairs)));
}

std::vector<std::uint8_t> segment_overlap_labels(std::size_t n_frames, std::size_t k,
                                                 MomentSpan span) {
    if (span.start > span.end || span.end >= n_frames)
        throw ContractError("segment_overlap_labels: span out of range");
    const auto lengths = segment_lengths(n_frames, k);
    std::vector<std::uint8_t> overlap(k, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t lo = off;
        const std::size_t hi = off + lengths[i] - 1;
        overlap[i] = (lo <= span.end && span.start <= hi) ? 1 : 0;
        off += lengths[i];
    }
    return overlap;
}

template <typename T>
Tensor<T> npm_loss(const Tensor<T>& nil_scores, const std::vector<std::uint8_t>& overlap) {
    if (nil_scores.rank() != 1 || nil_scores.dim(0) != overlap.size())
        throw ShapeError("npm_loss: expected [" + std::to_string(overlap.size()) +
                         "] scores, got " + shape_str(nil_scores.shape()));
    std::vector<T> targets(overlap.size());
    for (std::size_t i = 0; i < overlap.size(); ++i) targets[i] = T(overlap[i]);
    return binary_cross_entropy(nil_scores, targets);
}

template <typename T>
LossTerms<T> compute_losses(const ForwardOutput<T>& out, const FrameLabelSet& labels,
                            const ModelConfig& mcfg, const LossConfig& lcfg,
                            RngStream& saliency_rng) {
    LossTerms<T> t;
    t.span = span_loss(out.start_logits, out.end_logits, labels.span);
    t.qgh = qgh_loss(out.highlight_scores, labels);
    t.npm = npm_loss(out.nil_scores,
                     segment_overlap_labels(labels.n_frames, mcfg.num_segments, labels.span));
    t.saliency = saliency_loss(out.saliency_scores, labels, lcfg.saliency_margin,
                               lcfg.saliency_pairs, saliency_rng);
    if (lcfg.enable_nce) {
        t.nce = frame_nce_loss(out.projected_video_features, out.projected_text_features, labels,
                               mcfg.contrastive_tau);
        // frame_nce_loss averages over anchors; sum mode undoes that scaling.
        if (lcfg.nce_reduction == NceReduction::kSum)
            t.nce = scale(t.nce, T(double(labels.positives.size())));
    } else {
        t.nce = Tensor<T>::scalar(T(0));
    }
    t.total = add(add(add(add(t.span, t.qgh), t.npm), t.saliency), t.nce);
    return t;
}

template double frame_text_similarity<float>(const Tensor<float>&, const Tensor<float>&, double);
template double frame_text_similarity<double>(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> frame_nce_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                             const FrameLabelSet&, double);
template Tensor<double> frame_nce_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                               const FrameLabelSet&, double);
template Tensor<float> span_loss<float>(const Tensor<float>&, const Tensor<float>&, MomentSpan);
template Tensor<double> span_loss<double>(const Tensor<double>&, const Tensor<double>&, MomentSpan);
template Tensor<float> qgh_loss<float>(const Tensor<float>&, const FrameLabelSet&);
template Tensor<double> qgh_loss<double>(const Tensor<double>&, const FrameLabelSet&);
template Tensor<float> saliency_loss<float>(const Tensor<float>&, const FrameLabelSet&, double,
                                            std::size_t, RngStream&);
template Tensor<double> saliency_loss<double>(const Tensor<double>&, const FrameLabelSet&, double,
                                              std::size_t, RngStream&);
template Tensor<float> npm_loss<float>(const Tensor<float>&, const std::vector<std::uint8_t>&);
template Tensor<double> npm_loss<double>(const Tensor<double>&, const std::vector<std::uint8_t>&);
template LossTerms<float> compute_losses<float>(const ForwardOutput<float>&, const FrameLabelSet&,
                                                const ModelConfig&, const LossConfig&, RngStream&);
template LossTerms<double> compute_losses<double>(const ForwardOutput<double>&,
                                                  const FrameLabelSet&, const ModelConfig&,
                                                  const LossConfig&, RngStream&);

} // namespace msxt
