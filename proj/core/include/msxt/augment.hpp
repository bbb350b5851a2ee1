#pragma once

#include <cstddef>

#include "msxt/dataset.hpp"
#include "msxt/rng.hpp"

namespace msxt {

struct AugmentConfig {
    // Window length ratio interval for sliding-window sampling.
    double ratio_lo = 0.4;
    double ratio_hi = 0.8;
    // Probability that video_splice fires at all.
    double splice_probability = 0.5;
    bool enable_sliding_window = true;
    bool enable_splice = true;

    void validate() const; // throws ConfigError
};

// Crops a random window that always contains the full span. Draws the ratio
// first, then the window start; window length is max(round(ratio * n_frames),
// span_length) clamped to [1, n_frames]. Text and metadata pass through.
ClipSample sliding_window_sample(const ClipSample& clip, const AugmentConfig& cfg, RngStream& rng);

// With probability splice_probability, cuts `background` at a uniform
// position c in {0..l2} and wraps it around `clip`: head = background[0, c),
// tail = background[c, l2), span shifts by c. Background's own span and text
// are discarded. Otherwise returns `clip` unchanged.
ClipSample video_splice(const ClipSample& clip, const ClipSample& background,
                        const AugmentConfig& cfg, RngStream& rng);

// Sliding-window sampling followed by splicing, sharing one RNG stream.
// Disabled stages pass through. Training-only: evaluation never calls this.
ClipSample combined_augment(const ClipSample& clip, const ClipSample& background,
                            const AugmentConfig& cfg, RngStream& rng);

} // namespace msxt
