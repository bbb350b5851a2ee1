#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msxt/rng.hpp"
#include "msxt/tensor.hpp"

// Multi-scale cross-modal transformer.
//
// The video is split into K contiguous near-equal segments; each segment runs
// through a stack of T cross-attention layers against the query text (video
// queries attend to text keys/values and vice versa, otherwise standard
// post-norm encoder blocks). Per segment, a nil scorer estimates overlap
// confidence and re-weights the segment's features; the re-weighted segments
// are concatenated back in time order and feed three heads: highlight,
// saliency, and a highlight-gated span predictor emitting start/end logits.

namespace msxt {

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t num_heads = 4;
    std::size_t num_layers = 3;    // T: cross-attention layers per segment
    std::size_t num_segments = 4;  // K
    std::size_t d_video_in = 32;
    std::size_t d_text_in = 24;
    std::size_t ffn_mult = 4;
    double dropout_p = 0.1;
    std::size_t max_span_len_frames = 48;
    double contrastive_tau = 0.07;
    std::size_t span_pred_layers = 2;
    std::size_t max_positions = 512;  // positional-encoding table rows
    double layer_norm_eps = 1e-5;

    // Throws ConfigError on the first violated constraint.
    void validate() const;
};

template <class T>
struct AttentionWeights {
    Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
};

template <class T>
struct EncoderBlockWeights {
    AttentionWeights<T> attn;
    Tensor<T> ln1_gain, ln1_bias;
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor<T> ln2_gain, ln2_bias;
};

template <class T>
struct CrossLayerWeights {
    EncoderBlockWeights<T> video;  // queries from video, keys/values from text
    EncoderBlockWeights<T> text;   // queries from text, keys/values from video
};

template <class T>
struct ModelWeights {
    Tensor<T> video_in_w, video_in_b;  // d_video_in -> d_model
    Tensor<T> text_in_w, text_in_b;    // d_text_in -> d_model
    Tensor<T> positional;              // [max_positions x d_model], fixed, not learned
    std::vector<CrossLayerWeights<T>> layers;        // T entries, shared across segments
    Tensor<T> npm_w, npm_b;                          // nil scorer, d_model -> 1
    Tensor<T> saliency_w1, saliency_b1, saliency_w2, saliency_b2;
    Tensor<T> highlight_w1, highlight_b1, highlight_w2, highlight_b2;
    std::vector<EncoderBlockWeights<T>> span_layers;  // self-attention encoder layers
    Tensor<T> start_w, start_b, end_w, end_b;
    Tensor<T> contrast_w, contrast_b;  // shared projection into the contrastive space

    // Visits every learnable tensor in a fixed declaration order (the
    // checkpoint and optimizer order). The positional table is not visited.
    template <class F>
    void for_each_parameter(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each_parameter(F&& f) const {
        visit(*this, f);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_parameter([&](const std::string&, const Tensor<T>&) { ++n; });
        return n;
    }

    std::size_t parameter_scalars() const {
        std::size_t n = 0;
        for_each_parameter([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    void set_requires_grad(bool v) {
        for_each_parameter([&](const std::string&, Tensor<T>& t) { t.set_requires_grad(v); });
    }

    void zero_grad() {
        for_each_parameter([&](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }

    // Deep copy: fresh nodes, same values. Graphs built on the clone never
    // touch the original (used for per-worker training slots).
    ModelWeights clone() const {
        ModelWeights out = *this;
        auto deep = [](Tensor<T>& t) {
            t = Tensor<T>::from_values(t.shape(), t.value(), t.requires_grad());
        };
        out.for_each_parameter([&](const std::string&, Tensor<T>& t) { deep(t); });
        deep(out.positional);
        return out;
    }

  private:
    template <class Self, class F>
    static void visit_attn(Self& a, const std::string& p, F& f) {
        f(p + ".q_w", a.q_w);
        f(p + ".q_b", a.q_b);
        f(p + ".k_w", a.k_w);
        f(p + ".k_b", a.k_b);
        f(p + ".v_w", a.v_w);
        f(p + ".v_b", a.v_b);
        f(p + ".o_w", a.o_w);
        f(p + ".o_b", a.o_b);
    }

    template <class Self, class F>
    static void visit_block(Self& b, const std::string& p, F& f) {
        visit_attn(b.attn, p + ".attn", f);
        f(p + ".ln1_gain", b.ln1_gain);
        f(p + ".ln1_bias", b.ln1_bias);
        f(p + ".ffn_w1", b.ffn_w1);
        f(p + ".ffn_b1", b.ffn_b1);
        f(p + ".ffn_w2", b.ffn_w2);
        f(p + ".ffn_b2", b.ffn_b2);
        f(p + ".ln2_gain", b.ln2_gain);
        f(p + ".ln2_bias", b.ln2_bias);
    }

    template <class Self, class F>
    static void visit(Self& w, F& f) {
        f("video_in.w", w.video_in_w);
        f("video_in.b", w.video_in_b);
        f("text_in.w", w.text_in_w);
        f("text_in.b", w.text_in_b);
        for (std::size_t i = 0; i < w.layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i);
            visit_block(w.layers[i].video, p + ".video", f);
            visit_block(w.layers[i].text, p + ".text", f);
        }
        f("npm.w", w.npm_w);
        f("npm.b", w.npm_b);
        f("saliency.w1", w.saliency_w1);
        f("saliency.b1", w.saliency_b1);
        f("saliency.w2", w.saliency_w2);
        f("saliency.b2", w.saliency_b2);
        f("highlight.w1", w.highlight_w1);
        f("highlight.b1", w.highlight_b1);
        f("highlight.w2", w.highlight_w2);
        f("highlight.b2", w.highlight_b2);
        for (std::size_t i = 0; i < w.span_layers.size(); ++i)
            visit_block(w.span_layers[i], "span" + std::to_string(i), f);
        f("start.w", w.start_w);
        f("start.b", w.start_b);
        f("end.w", w.end_w);
        f("end.b", w.end_b);
        f("contrast.w", w.contrast_w);
        f("contrast.b", w.contrast_b);
    }
};

template <class T>
struct ForwardOutput {
    Tensor<T> start_logits;              // [L_v]
    Tensor<T> end_logits;                // [L_v]
    Tensor<T> highlight_scores;          // [L_v], each in (0,1)
    Tensor<T> saliency_scores;           // [L_v]
    Tensor<T> nil_scores;                // [K], each in (0,1)
    Tensor<T> final_video_features;      // [L_v x d_model]
    Tensor<T> projected_video_features;  // [L_v x d_model]
    Tensor<T> projected_text_features;   // [L_t x d_model]
};

// Contiguous near-equal split: lengths differ by at most one, earlier
// segments take the remainder. Throws ConfigError when l_v < k.
std::vector<std::size_t> segment_lengths(std::size_t l_v, std::size_t k);

// Allocates all weight tensors (zero-filled, requires_grad on) plus the
// positional table for the given config. Shared by init and checkpoint load.
template <class T>
ModelWeights<T> make_weights_shell(const ModelConfig& cfg);

// Deterministic init: rank-2 weights ~ uniform(-a, a), a = sqrt(6/(fan_in +
// fan_out)); biases 0; layer-norm gain 1, bias 0. Every value is rounded
// through f32 so checkpoints round-trip exactly in either precision.
template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Scaled dot-product attention, queries from q_in, keys/values from kv_in;
// heads are contiguous column groups of width d_model/num_heads. Returns the
// projected context (pre-residual). dropout_rng may be null when train_mode
// is false or dropout_p == 0.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const AttentionWeights<T>& w, const ModelConfig& cfg, bool train_mode,
                               RngStream* dropout_rng);

// One cross-attention layer; both streams update from the layer's inputs.
// dropout_rng may be null when train_mode is false or dropout_p == 0.
template <class T>
std::pair<Tensor<T>, Tensor<T>> cross_attention_layer(const Tensor<T>& video, const Tensor<T>& text,
                                                      const CrossLayerWeights<T>& w,
                                                      const ModelConfig& cfg, bool train_mode,
                                                      RngStream* dropout_rng);

// T cross-attention layers over one video segment; returns the video stream.
template <class T>
Tensor<T> encode_segment(const Tensor<T>& video_seg, const Tensor<T>& text, const ModelWeights<T>& w,
                         const ModelConfig& cfg, bool train_mode, RngStream* dropout_rng);

// Full forward pass; inputs are raw [L_v x d_video_in] and [L_t x d_text_in].
template <class T>
ForwardOutput<T> multi_scale_forward(const Tensor<T>& video, const Tensor<T>& text,
                                     const ModelWeights<T>& w, const ModelConfig& cfg,
                                     bool train_mode, RngStream* dropout_rng = nullptr);

}  // namespace msxt
