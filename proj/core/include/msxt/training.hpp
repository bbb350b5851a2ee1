#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "msxt/augment.hpp"
#include "msxt/dataset.hpp"
#include "msxt/evaluation.hpp"
#include "msxt/losses.hpp"
#include "msxt/model.hpp"

namespace msxt {

struct TrainConfig {
    std::size_t epochs = 6;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 1;
    AugmentConfig augment;  // both enable flags off = train on raw clips
    NceReduction nce_reduction = NceReduction::kMean;
    // Ablation switch for the contrastive term (base-model comparisons).
    bool enable_nce = true;
    std::size_t eval_every_n_steps = 50;  // 0 = validate only at the end
    std::string checkpoint_dir;           // empty = keep weights in memory only

    void validate() const;  // throws ConfigError
};

// Adam first/second moments, one slot per parameter in declaration order.
// Moments are kept in double regardless of the parameter precision.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

template <class T>
AdamState make_adam_state(const ModelWeights<T>& weights);

// Reads accumulated parameter gradients into flat buffers (declaration
// order), scaling each by `scale`; parameters without an accumulated
// gradient contribute zeros.
template <class T>
std::vector<std::vector<double>> collect_gradients(const ModelWeights<T>& weights, double scale);

// One optimizer step: global-norm clipping first, then Adam with bias
// correction and decoupled weight decay. Updated parameters are rounded
// through float so checkpoints (stored as f32) round-trip losslessly.
// Returns the pre-clip global gradient norm.
template <class T>
double adam_step(ModelWeights<T>& params, const std::vector<std::vector<double>>& grads,
                 AdamState& state, const TrainConfig& cfg);

template <class T>
struct TrainOutcome {
    ModelWeights<T> weights;  // final parameters
    std::filesystem::path final_checkpoint;  // empty when checkpoint_dir is empty
    std::filesystem::path best_checkpoint;   // empty when no validation ran
    RecallTable final_val;
    RecallTable best_val;
    std::size_t best_step = 0;
    std::size_t steps = 0;
};

// Deterministic training loop. Per step: sample a batch with replacement,
// augment each sample on its own RNG stream, accumulate gradients over the
// per-sample graphs, take one Adam step. Writes one JSON line per step
// ({step, losses..., lr, grad_norm}) and one per validation pass
// ({step, r1_03, r1_05, r5_03, r5_05}) to `metrics` when non-null.
// Throws NumericError naming the step and term on a non-finite loss.
template <class T>
TrainOutcome<T> train(const std::vector<ClipSample>& train_clips,
                      const std::vector<ClipSample>& val_clips, const ModelConfig& mcfg,
                      const TrainConfig& tcfg, std::ostream* metrics);

} // namespace msxt
