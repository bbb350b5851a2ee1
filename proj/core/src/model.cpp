#include "msxt/model.hpp"

#include <cmath>
#include <numeric>

#include "msxt/errors.hpp"
#include "msxt/ops.hpp"

namespace msxt {

void ModelConfig::validate() const {
    if (d_model == 0) throw ConfigError("model.d_model must be positive");
    if (num_heads == 0) throw ConfigError("model.num_heads must be positive");
    if (d_model % num_heads != 0)
        throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by num_heads (" +
                          std::to_string(num_heads) + ")");
    if (num_layers == 0) throw ConfigError("model.num_layers must be >= 1");
    if (num_segments == 0) throw ConfigError("model.num_segments must be >= 1");
    if (d_video_in == 0) throw ConfigError("model.d_video_in must be positive");
    if (d_text_in == 0) throw ConfigError("model.d_text_in must be positive");
    if (ffn_mult == 0) throw ConfigError("model.ffn_mult must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model.dropout_p must be in [0,1)");
    if (max_span_len_frames == 0) throw ConfigError("model.max_span_len_frames must be positive");
    if (!(contrastive_tau > 0.0)) throw ConfigError("model.contrastive_tau must be positive");
    if (span_pred_layers == 0) throw ConfigError("model.span_pred_layers must be >= 1");
    if (max_positions == 0) throw ConfigError("model.max_positions must be positive");
    if (!(layer_norm_eps > 0.0)) throw ConfigError("model.layer_norm_eps must be positive");
}

std::vector<std::size_t> segment_lengths(std::size_t l_v, std::size_t k) {
    if (k == 0) throw ConfigError("segment_lengths: K must be >= 1");
    if (l_v < k)
        throw ConfigError("video length " + std::to_string(l_v) + " is shorter than num_segments " +
                          std::to_string(k));
    const std::size_t base = l_v / k;
    const std::size_t rem = l_v % k;
    std::vector<std::size_t> lens(k, base);
    for (std::size_t i = 0; i < rem; ++i) ++lens[i];
    return lens;
}

namespace {

template <class T>
Tensor<T> apply_dropout(const Tensor<T>& x, const ModelConfig& cfg, bool train_mode,
                        RngStream* rng) {
    if (!train_mode || cfg.dropout_p == 0.0) return x;
    if (!rng) throw ContractError("train-mode forward with dropout_p > 0 requires an RNG stream");
    return dropout(x, cfg.dropout_p, true, *rng);
}

}  // namespace

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const AttentionWeights<T>& w, const ModelConfig& cfg,
                               bool train_mode, RngStream* rng) {
    const std::size_t dh = cfg.d_model / cfg.num_heads;
    auto q = linear(q_in, w.q_w, w.q_b);
    auto k = linear(kv_in, w.k_w, w.k_b);
    auto v = linear(kv_in, w.v_w, w.v_b);

    const std::vector<std::size_t> head_cols(cfg.num_heads, dh);
    auto qh = split(q, 1, head_cols);
    auto kh = split(k, 1, head_cols);
    auto vh = split(v, 1, head_cols);

    const T inv_sqrt_dh = T(1) / T(std::sqrt(double(dh)));
    std::vector<Tensor<T>> ctx;
    ctx.reserve(cfg.num_heads);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        auto scores = scale(matmul(qh[h], transpose_last2(kh[h])), inv_sqrt_dh);
        auto probs = apply_dropout(softmax_lastdim(scores), cfg, train_mode, rng);
        ctx.push_back(matmul(probs, vh[h]));
    }
    auto merged = cfg.num_heads == 1 ? ctx[0] : concat(ctx, 1);
    return apply_dropout(linear(merged, w.o_w, w.o_b), cfg, train_mode, rng);
}

namespace {

// Standard post-norm encoder block with the attention source swappable:
// x + attn -> LN -> + FFN -> LN.
template <class T>
Tensor<T> encoder_block(const Tensor<T>& x_q, const Tensor<T>& x_kv,
                        const EncoderBlockWeights<T>& w, const ModelConfig& cfg, bool train_mode,
                        RngStream* rng) {
    const T eps = T(cfg.layer_norm_eps);
    auto attn = multi_head_attention(x_q, x_kv, w.attn, cfg, train_mode, rng);
    auto x1 = layer_norm(add(x_q, attn), w.ln1_gain, w.ln1_bias, eps);
    auto hidden = relu(linear(x1, w.ffn_w1, w.ffn_b1));
    auto ffn = apply_dropout(linear(hidden, w.ffn_w2, w.ffn_b2), cfg, train_mode, rng);
    return layer_norm(add(x1, ffn), w.ln2_gain, w.ln2_bias, eps);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> encode_segment_full(const Tensor<T>& video_seg, const Tensor<T>& text,
                                                    const ModelWeights<T>& w, const ModelConfig& cfg,
                                                    bool train_mode, RngStream* rng) {
    auto v = video_seg;
    auto t = text;
    for (const auto& layer : w.layers) {
        auto [nv, nt] = cross_attention_layer(v, t, layer, cfg, train_mode, rng);
        v = std::move(nv);
        t = std::move(nt);
    }
    return {std::move(v), std::move(t)};
}

template <class T>
Tensor<T> rows_of_positional(const ModelWeights<T>& w, std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    return gather_rows(w.positional, std::move(idx));
}

}  // namespace

template <class T>
std::pair<Tensor<T>, Tensor<T>> cross_attention_layer(const Tensor<T>& video, const Tensor<T>& text,
                                                      const CrossLayerWeights<T>& w,
                                                      const ModelConfig& cfg, bool train_mode,
                                                      RngStream* dropout_rng) {
    if (video.rank() != 2 || text.rank() != 2 || video.dim(1) != cfg.d_model ||
        text.dim(1) != cfg.d_model)
        throw ShapeError("cross_attention_layer: streams must be [*x" + std::to_string(cfg.d_model) +
                         "], got " + shape_str(video.shape()) + " and " + shape_str(text.shape()));
    auto v_out = encoder_block(video, text, w.video, cfg, train_mode, dropout_rng);
    auto t_out = encoder_block(text, video, w.text, cfg, train_mode, dropout_rng);
    return {std::move(v_out), std::move(t_out)};
}

template <class T>
Tensor<T> encode_segment(const Tensor<T>& video_seg, const Tensor<T>& text, const ModelWeights<T>& w,
                         const ModelConfig& cfg, bool train_mode, RngStream* dropout_rng) {
    return encode_segment_full(video_seg, text, w, cfg, train_mode, dropout_rng).first;
}

template <class T>
ForwardOutput<T> multi_scale_forward(const Tensor<T>& video, const Tensor<T>& text,
                                     const ModelWeights<T>& w, const ModelConfig& cfg,
                                     bool train_mode, RngStream* dropout_rng) {
    cfg.validate();
    if (video.rank() != 2 || video.dim(1) != cfg.d_video_in)
        throw ShapeError("forward: video must be [*x" + std::to_string(cfg.d_video_in) + "], got " +
                         shape_str(video.shape()));
    if (text.rank() != 2 || text.dim(1) != cfg.d_text_in)
        throw ShapeError("forward: text must be [*x" + std::to_string(cfg.d_text_in) + "], got " +
                         shape_str(text.shape()));
    const std::size_t l_v = video.dim(0);
    const std::size_t l_t = text.dim(0);
    const std::size_t k = cfg.num_segments;
    if (l_v < k)
        throw ConfigError("video length " + std::to_string(l_v) + " is shorter than num_segments " +
                          std::to_string(k));
    if (l_v > cfg.max_positions || l_t > cfg.max_positions)
        throw ConfigError("sequence length exceeds max_positions (" + std::to_string(cfg.max_positions) +
                          ")");

    // Input projections plus fixed sinusoidal positions. Video positions are
    // global clip positions so concatenated segments keep time order.
    auto v0 = add(linear(video, w.video_in_w, w.video_in_b), rows_of_positional(w, l_v));
    auto t0 = add(linear(text, w.text_in_w, w.text_in_b), rows_of_positional(w, l_t));

    auto lens = segment_lengths(l_v, k);
    auto segs = k == 1 ? std::vector<Tensor<T>>{v0} : split(v0, 0, lens);

    std::vector<Tensor<T>> weighted;
    std::vector<Tensor<T>> nils;
    weighted.reserve(k);
    nils.reserve(k);
    Tensor<T> text_acc;
    for (std::size_t s = 0; s < k; ++s) {
        auto [fk, tk] = encode_segment_full(segs[s], t0, w, cfg, train_mode, dropout_rng);
        auto pooled = reshape(mean_axis(fk, 0), {1, cfg.d_model});
        auto nil = sigmoid(reshape(linear(pooled, w.npm_w, w.npm_b), {1}));
        weighted.push_back(mul_scalar(fk, nil));
        nils.push_back(std::move(nil));
        text_acc = s == 0 ? tk : add(text_acc, tk);
    }
    auto f_final = k == 1 ? weighted[0] : concat(weighted, 0);
    auto text_final = scale(text_acc, T(1) / T(k));

    ForwardOutput<T> out;
    out.nil_scores = k == 1 ? nils[0] : concat(nils, 0);
    out.final_video_features = f_final;

    auto hl_hidden = relu(linear(f_final, w.highlight_w1, w.highlight_b1));
    out.highlight_scores = sigmoid(reshape(linear(hl_hidden, w.highlight_w2, w.highlight_b2), {l_v}));

    auto sal_hidden = relu(linear(f_final, w.saliency_w1, w.saliency_b1));
    out.saliency_scores = reshape(linear(sal_hidden, w.saliency_w2, w.saliency_b2), {l_v});

    // Span predictor: highlight-gated features through self-attention blocks.
    auto sp = mul_rowwise(f_final, out.highlight_scores);
    for (const auto& blk : w.span_layers) sp = encoder_block(sp, sp, blk, cfg, train_mode, dropout_rng);
    out.start_logits = reshape(linear(sp, w.start_w, w.start_b), {l_v});
    out.end_logits = reshape(linear(sp, w.end_w, w.end_b), {l_v});

    out.projected_video_features = linear(f_final, w.contrast_w, w.contrast_b);
    out.projected_text_features = linear(text_final, w.contrast_w, w.contrast_b);
    return out;
}

namespace {

template <class T>
AttentionWeights<T> make_attention(std::size_t d) {
    AttentionWeights<T> a;
    a.q_w = Tensor<T>::zeros({d, d}, true);
    a.q_b = Tensor<T>::zeros({d}, true);
    a.k_w = Tensor<T>::zeros({d, d}, true);
    a.k_b = Tensor<T>::zeros({d}, true);
    a.v_w = Tensor<T>::zeros({d, d}, true);
    a.v_b = Tensor<T>::zeros({d}, true);
    a.o_w = Tensor<T>::zeros({d, d}, true);
    a.o_b = Tensor<T>::zeros({d}, true);
    return a;
}

template <class T>
EncoderBlockWeights<T> make_block(std::size_t d, std::size_t mult) {
    EncoderBlockWeights<T> b;
    b.attn = make_attention<T>(d);
    b.ln1_gain = Tensor<T>::zeros({d}, true);
    b.ln1_bias = Tensor<T>::zeros({d}, true);
    b.ffn_w1 = Tensor<T>::zeros({d, d * mult}, true);
    b.ffn_b1 = Tensor<T>::zeros({d * mult}, true);
    b.ffn_w2 = Tensor<T>::zeros({d * mult, d}, true);
    b.ffn_b2 = Tensor<T>::zeros({d}, true);
    b.ln2_gain = Tensor<T>::zeros({d}, true);
    b.ln2_bias = Tensor<T>::zeros({d}, true);
    return b;
}

}  // namespace

template <class T>
ModelWeights<T> make_weights_shell(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    ModelWeights<T> w;
    w.video_in_w = Tensor<T>::zeros({cfg.d_video_in, d}, true);
    w.video_in_b = Tensor<T>::zeros({d}, true);
    w.text_in_w = Tensor<T>::zeros({cfg.d_text_in, d}, true);
    w.text_in_b = Tensor<T>::zeros({d}, true);

    w.positional = Tensor<T>::zeros({cfg.max_positions, d}, false);
    auto& pe = w.positional.leaf_value();
    for (std::size_t pos = 0; pos < cfg.max_positions; ++pos) {
        for (std::size_t j = 0; j < d; ++j) {
            const double expo = double(2 * (j / 2)) / double(d);
            const double angle = double(pos) * std::exp(-std::log(10000.0) * expo);
            pe[pos * d + j] = T(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }

    w.layers.reserve(cfg.num_layers);
    for (std::size_t i = 0; i < cfg.num_layers; ++i)
        w.layers.push_back({make_block<T>(d, cfg.ffn_mult), make_block<T>(d, cfg.ffn_mult)});

    w.npm_w = Tensor<T>::zeros({d, 1}, true);
    w.npm_b = Tensor<T>::zeros({1}, true);
    w.saliency_w1 = Tensor<T>::zeros({d, d}, true);
    w.saliency_b1 = Tensor<T>::zeros({d}, true);
    w.saliency_w2 = Tensor<T>::zeros({d, 1}, true);
    w.saliency_b2 = Tensor<T>::zeros({1}, true);
    w.highlight_w1 = Tensor<T>::zeros({d, d}, true);
    w.highlight_b1 = Tensor<T>::zeros({d}, true);
    w.highlight_w2 = Tensor<T>::zeros({d, 1}, true);
    w.highlight_b2 = Tensor<T>::zeros({1}, true);

    w.span_layers.reserve(cfg.span_pred_layers);
    for (std::size_t i = 0; i < cfg.span_pred_layers; ++i)
        w.span_layers.push_back(make_block<T>(d, cfg.ffn_mult));

    w.start_w = Tensor<T>::zeros({d, 1}, true);
    w.start_b = Tensor<T>::zeros({1}, true);
    w.end_w = Tensor<T>::zeros({d, 1}, true);
    w.end_b = Tensor<T>::zeros({1}, true);
    w.contrast_w = Tensor<T>::zeros({d, d}, true);
    w.contrast_b = Tensor<T>::zeros({d}, true);
    return w;
}

template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    auto w = make_weights_shell<T>(cfg);
    const RngTree tree(seed);
    std::size_t index = 0;
    // Values are rounded through f32 so weights are representable in either
    // precision and f32 checkpoints round-trip bit-exactly.
    w.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
        auto rs = tree.stream("init", index++);
        auto& vals = t.leaf_value();
        if (t.rank() == 2) {
            const double a = std::sqrt(6.0 / double(t.dim(0) + t.dim(1)));
            for (auto& v : vals) v = T(float(rs.next_uniform(-a, a)));
        } else if (name.find("gain") != std::string::npos) {
            for (auto& v : vals) v = T(1);
        } else {
            for (auto& v : vals) v = T(0);
        }
    });
    return w;
}

template ModelWeights<float> make_weights_shell<float>(const ModelConfig&);
template ModelWeights<double> make_weights_shell<double>(const ModelConfig&);
template ModelWeights<float> init_weights<float>(const ModelConfig&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const ModelConfig&, std::uint64_t);
template Tensor<float> multi_head_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                                   const AttentionWeights<float>&, const ModelConfig&,
                                                   bool, RngStream*);
template Tensor<double> multi_head_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const AttentionWeights<double>&,
                                                     const ModelConfig&, bool, RngStream*);
template std::pair<Tensor<float>, Tensor<float>> cross_attention_layer<float>(
    const Tensor<float>&, const Tensor<float>&, const CrossLayerWeights<float>&, const ModelConfig&,
    bool, RngStream*);
template std::pair<Tensor<double>, Tensor<double>> cross_attention_layer<double>(
    const Tensor<double>&, const Tensor<double>&, const CrossLayerWeights<double>&, const ModelConfig&,
    bool, RngStream*);
template Tensor<float> encode_segment<float>(const Tensor<float>&, const Tensor<float>&,
                                             const ModelWeights<float>&, const ModelConfig&, bool,
                                             RngStream*);
template Tensor<double> encode_segment<double>(const Tensor<double>&, const Tensor<double>&,
                                               const ModelWeights<double>&, const ModelConfig&, bool,
                                               RngStream*);
template ForwardOutput<float> multi_scale_forward<float>(const Tensor<float>&, const Tensor<float>&,
                                                         const ModelWeights<float>&, const ModelConfig&,
                                                         bool, RngStream*);
template ForwardOutput<double> multi_scale_forward<double>(const Tensor<double>&, const Tensor<double>&,
                                                           const ModelWeights<double>&,
                                                           const ModelConfig&, bool, RngStream*);

}  // namespace msxt
