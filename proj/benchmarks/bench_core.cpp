#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include <msxt/dataset.hpp>
#include <msxt/evaluation.hpp>
#include <msxt/losses.hpp>
#include <msxt/model.hpp>
#include <msxt/ops.hpp>
#include <msxt/rng.hpp>
#include <msxt/tensor.hpp>

namespace {

using Td = msxt::Tensor<double>;

Td random_tensor(const std::vector<std::size_t>& shape, msxt::RngStream& rng) {
    std::size_t n = 1;
    for (std::size_t d : shape)
        n *= d;
    std::vector<double> vals(n);
    for (double& v : vals)
        v = rng.next_normal();
    return Td::from_values(shape, std::move(vals));
}

msxt::ModelConfig bench_model_config() {
    msxt::ModelConfig cfg;
    cfg.dropout_p = 0.0;
    return cfg;
}

msxt::ClipSample bench_clip(std::size_t n_frames, std::size_t n_tokens) {
    msxt::GeneratorConfig gen;
    gen.seed = 17;
    gen.clip_len_lo = n_frames;
    gen.clip_len_hi = n_frames;
    gen.span_len_lo = 8;
    gen.span_len_hi = 8;
    gen.text_len_lo = n_tokens;
    gen.text_len_hi = n_tokens;
    return msxt::ClipGenerator(gen).generate(0);
}

std::pair<Td, Td> clip_tensors(const msxt::ClipSample& clip) {
    return {msxt::tensor_cast<double>(clip.video_features),
            msxt::tensor_cast<double>(clip.text_features)};
}

void bm_matmul(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    msxt::RngStream rng(1);
    const auto a = random_tensor({n, n}, rng);
    const auto b = random_tensor({n, n}, rng);
    msxt::NoGradGuard guard;
    for (auto _ : state) {
        auto c = msxt::matmul(a, b);
        benchmark::DoNotOptimize(c.value().data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(n) * int64_t(n) * int64_t(n));
}

void bm_attention_forward(benchmark::State& state) {
    const auto len = std::size_t(state.range(0));
    const auto cfg = bench_model_config();
    const auto w = msxt::init_weights<double>(cfg, 3);
    msxt::RngStream rng(4);
    const auto q = random_tensor({len, cfg.d_model}, rng);
    const auto kv = random_tensor({len, cfg.d_model}, rng);
    msxt::NoGradGuard guard;
    for (auto _ : state) {
        auto out = msxt::multi_head_attention(q, kv, w.layers[0].video.attn, cfg,
                                              /*train_mode=*/false, nullptr);
        benchmark::DoNotOptimize(out.value().data());
    }
}

void bm_model_forward(benchmark::State& state) {
    const auto n_frames = std::size_t(state.range(0));
    const auto cfg = bench_model_config();
    const auto w = msxt::init_weights<double>(cfg, 3);
    const auto clip = bench_clip(n_frames, 8);
    const auto [video, text] = clip_tensors(clip);
    msxt::NoGradGuard guard;
    for (auto _ : state) {
        auto out = msxt::multi_scale_forward(video, text, w, cfg, /*train_mode=*/false);
        benchmark::DoNotOptimize(out.start_logits.value().data());
    }
}

void bm_train_step(benchmark::State& state) {
    const auto n_frames = std::size_t(state.range(0));
    const auto cfg = bench_model_config();
    auto w = msxt::init_weights<double>(cfg, 3);
    w.set_requires_grad(true);
    const auto clip = bench_clip(n_frames, 8);
    const auto [video, text] = clip_tensors(clip);
    msxt::LossConfig lcfg;
    const auto labels =
        msxt::FrameLabelSet::make(clip.span, clip.n_frames(), lcfg.qgh_extension_alpha);
    for (auto _ : state) {
        w.zero_grad();
        msxt::RngStream sal_rng(8);
        auto out = msxt::multi_scale_forward(video, text, w, cfg, /*train_mode=*/false);
        auto losses = msxt::compute_losses(out, labels, cfg, lcfg, sal_rng);
        msxt::backward(losses.total);
        benchmark::DoNotOptimize(losses.total.value().data());
    }
}

void bm_frame_nce(benchmark::State& state) {
    const auto n_frames = std::size_t(state.range(0));
    const auto cfg = bench_model_config();
    msxt::RngStream rng(10);
    const auto video = random_tensor({n_frames, cfg.d_model}, rng);
    const auto text = random_tensor({8, cfg.d_model}, rng);
    msxt::LossConfig lcfg;
    const msxt::MomentSpan span{n_frames / 4, n_frames / 2};
    const auto labels =
        msxt::FrameLabelSet::make(span, n_frames, lcfg.qgh_extension_alpha);
    msxt::NoGradGuard guard;
    for (auto _ : state) {
        auto loss = msxt::frame_nce_loss(video, text, labels, cfg.contrastive_tau);
        benchmark::DoNotOptimize(loss.value().data());
    }
}

void bm_decode_topk(benchmark::State& state) {
    const auto len = std::size_t(state.range(0));
    msxt::RngStream rng(14);
    const auto s = random_tensor({len}, rng);
    const auto e = random_tensor({len}, rng);
    for (auto _ : state) {
        auto set = msxt::decode_topk(s, e, 5, 48);
        benchmark::DoNotOptimize(set.candidates.data());
    }
}

BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_attention_forward)->Arg(32)->Arg(96);
BENCHMARK(bm_model_forward)->Arg(48)->Arg(96);
BENCHMARK(bm_train_step)->Arg(48)->Arg(96);
BENCHMARK(bm_frame_nce)->Arg(48)->Arg(128);
BENCHMARK(bm_decode_topk)->Arg(64)->Arg(256);

} // namespace

BENCHMARK_MAIN();
