#include "msxt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "msxt/errors.hpp"

namespace msxt {

void AugmentConfig::validate() const {
    if (!(ratio_lo > 0.0) || ratio_lo > ratio_hi || ratio_hi > 1.0)
        throw ConfigError("augment config: need 0 < ratio_lo <= ratio_hi <= 1, got [" +
                          std::to_string(ratio_lo) + ", " + std::to_string(ratio_hi) + "]");
    if (splice_probability < 0.0 || splice_probability > 1.0)
        throw ConfigError("augment config: splice_probability must be in [0, 1]");
}

namespace {

// Rows [row_lo, row_hi) of a row-major [rows x width] value block.
std::vector<float> copy_rows(const std::vector<float>& src, std::size_t width, std::size_t row_lo,
                             std::size_t row_hi) {
    return {src.begin() + std::ptrdiff_t(row_lo * width),
            src.begin() + std::ptrdiff_t(row_hi * width)};
}

} // namespace

ClipSample sliding_window_sample(const ClipSample& clip, const AugmentConfig& cfg,
                                 RngStream& rng) {
    clip.validate();
    cfg.validate();
    const std::size_t lv = clip.n_frames();
    const std::size_t d = clip.video_features.dim(1);
    const std::size_t len = span_length(clip.span);

    const double ratio = rng.next_uniform(cfg.ratio_lo, cfg.ratio_hi);
    // Round half up, then keep the whole span and stay within the clip.
    auto w = std::size_t(std::floor(ratio * double(lv) + 0.5));
    w = std::clamp(std::max(w, len), std::size_t(1), lv);

    const std::size_t start_lo = clip.span.end + 1 >= w ? clip.span.end + 1 - w : 0;
    const std::size_t start_hi = std::min(clip.span.start, lv - w);
    const auto start =
        std::size_t(rng.next_int(std::int64_t(start_lo), std::int64_t(start_hi)));

    ClipSample out;
    out.clip_id = clip.clip_id;
    out.video_features = Tensor<float>::from_values(
        {w, d}, copy_rows(clip.video_features.value(), d, start, start + w));
    out.text_features = clip.text_features;
    out.span = {clip.span.start - start, clip.span.end - start};
    out.fps_feature = clip.fps_feature;
    return out;
}

ClipSample video_splice(const ClipSample& clip, const ClipSample& background,
                        const AugmentConfig& cfg, RngStream& rng) {
    clip.validate();
    background.validate();
    cfg.validate();
    if (clip.video_features.dim(1) != background.video_features.dim(1))
        throw ContractError("video_splice: feature widths differ: " +
                            shape_str(clip.video_features.shape()) + " vs " +
                            shape_str(background.video_features.shape()));

    if (!rng.next_bernoulli(cfg.splice_probability)) return clip;

    const std::size_t d = clip.video_features.dim(1);
    const std::size_t l1 = clip.n_frames();
    const std::size_t l2 = background.n_frames();
    const auto cut = std::size_t(rng.next_int(0, std::int64_t(l2)));

    std::vector<float> rows;
    rows.reserve((l1 + l2) * d);
    const auto& bg = background.video_features.value();
    const auto& fg = clip.video_features.value();
    rows.insert(rows.end(), bg.begin(), bg.begin() + std::ptrdiff_t(cut * d));
    rows.insert(rows.end(), fg.begin(), fg.end());
    rows.insert(rows.end(), bg.begin() + std::ptrdiff_t(cut * d), bg.end());

    ClipSample out;
    out.clip_id = clip.clip_id;
    out.video_features = Tensor<float>::from_values({l1 + l2, d}, std::move(rows));
    out.text_features = clip.text_features;
    out.span = {clip.span.start + cut, clip.span.end + cut};
    out.fps_feature = clip.fps_feature;
    return out;
}

ClipSample combined_augment(const ClipSample& clip, const ClipSample& background,
                            const AugmentConfig& cfg, RngStream& rng) {
    cfg.validate();
    ClipSample out = cfg.enable_sliding_window ? sliding_window_sample(clip, cfg, rng) : clip;
    if (cfg.enable_splice) out = video_splice(out, background, cfg, rng);
    return out;
}

} // namespace msxt
