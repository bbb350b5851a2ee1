#include "msxt/training.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "msxt/checkpoint.hpp"
#include "msxt/errors.hpp"
#include "msxt/logging.hpp"
#include "msxt/rng.hpp"

namespace msxt {
namespace {

using nlohmann::json;

// Parameters live on an f32 lattice so the f32 checkpoint encoding is
// lossless; applied at init and after every optimizer step.
template <class T>
void round_params_to_f32(ModelWeights<T>& w) {
    w.for_each_parameter([](const std::string&, Tensor<T>& t) {
        for (auto& x : t.leaf_value()) x = T(float(x));
    });
}

const char* kTermNames[] = {"span", "qgh", "npm", "saliency", "nce", "total"};

void check_finite(const LossBreakdown& b, std::size_t step) {
    const double terms[] = {b.span_loss, b.qgh_loss,      b.npm_loss,
                            b.saliency_loss, b.nce_loss, b.total};
    for (std::size_t i = 0; i < 6; ++i)
        if (!std::isfinite(terms[i]))
            throw NumericError("training aborted at step " + std::to_string(step) + ": " +
                               kTermNames[i] + " loss is non-finite");
}

} // namespace

void TrainConfig::validate() const {
    augment.validate();
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
        throw ConfigError("train: adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("train: adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("train: grad_clip_norm must be > 0");
}

template <class T>
AdamState make_adam_state(const ModelWeights<T>& weights) {
    AdamState s;
    weights.for_each_parameter([&](const std::string&, const Tensor<T>& t) {
        s.m.emplace_back(t.size(), 0.0);
        s.v.emplace_back(t.size(), 0.0);
    });
    return s;
}

template <class T>
std::vector<std::vector<double>> collect_gradients(const ModelWeights<T>& weights, double scale) {
    std::vector<std::vector<double>> grads;
    weights.for_each_parameter([&](const std::string&, const Tensor<T>& t) {
        std::vector<double> g(t.size(), 0.0);
        if (t.has_grad()) {
            const auto& raw = t.grad();
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = double(raw[j]) * scale;
        }
        grads.push_back(std::move(g));
    });
    return grads;
}

template <class T>
double adam_step(ModelWeights<T>& params, const std::vector<std::vector<double>>& grads,
                 AdamState& state, const TrainConfig& cfg) {
    if (grads.size() != state.m.size())
        throw ContractError("adam_step: gradient/state slot count mismatch");

    double sq = 0.0;
    for (const auto& g : grads)
        for (const double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    const double clip_scale = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(state.step));

    std::size_t i = 0;
    params.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
        auto& val = t.leaf_value();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g0 = grads[i];
        if (g0.size() != val.size())
            throw ContractError("adam_step: gradient size mismatch for " + name);
        for (std::size_t j = 0; j < val.size(); ++j) {
            const double g = g0[j] * clip_scale;
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g;
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g * g;
            const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
            const double p = double(val[j]);
            // Decoupled decay acts on the pre-step parameter value.
            val[j] = T(float(p - cfg.learning_rate * (update + cfg.weight_decay * p)));
        }
        ++i;
    });
    return norm;
}

template <class T>
TrainOutcome<T> train(const std::vector<ClipSample>& train_clips,
                      const std::vector<ClipSample>& val_clips, const ModelConfig& mcfg,
                      const TrainConfig& tcfg, std::ostream* metrics) {
    mcfg.validate();
    tcfg.validate();
    if (train_clips.empty()) throw ContractError("train: empty training split");
    auto check_clip = [&](const ClipSample& c) {
        c.validate();
        if (c.video_features.shape()[1] != mcfg.d_video_in ||
            c.text_features.shape()[1] != mcfg.d_text_in)
            throw ShapeError("train: clip " + c.clip_id + " feature widths do not match the model");
    };
    for (const auto& c : train_clips) check_clip(c);
    for (const auto& c : val_clips) check_clip(c);

    LossConfig lcfg;
    lcfg.nce_reduction = tcfg.nce_reduction;
    lcfg.enable_nce = tcfg.enable_nce;

    auto weights = init_weights<T>(mcfg, tcfg.seed);
    round_params_to_f32(weights);
    auto state = make_adam_state(weights);
    const RngTree tree(tcfg.seed);

    const std::size_t n = train_clips.size();
    const std::size_t steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
    const std::size_t total_steps = tcfg.epochs * steps_per_epoch;

    TrainOutcome<T> out;
    out.steps = total_steps;
    double best_r1 = -1.0;
    const bool checkpointing = !tcfg.checkpoint_dir.empty();
    const std::filesystem::path ckdir = tcfg.checkpoint_dir;
    if (checkpointing) std::filesystem::create_directories(ckdir);

    auto run_validation = [&](std::size_t step) {
        const auto records = predict_split(val_clips, weights, mcfg, 5);
        const auto table = recall_table(records);
        if (metrics) {
            json line;
            line["step"] = step;
            line["r1_03"] = table.r1_iou03;
            line["r1_05"] = table.r1_iou05;
            line["r5_03"] = table.r5_iou03;
            line["r5_05"] = table.r5_iou05;
            *metrics << line.dump() << "\n";
        }
        logging::debug("step " + std::to_string(step) + " val r1@0.3 = " +
                       std::to_string(table.r1_iou03));
        if (table.r1_iou03 > best_r1) {
            best_r1 = table.r1_iou03;
            out.best_val = table;
            out.best_step = step;
            if (checkpointing) {
                save_checkpoint(ckdir / "best.ckpt", mcfg, weights);
                out.best_checkpoint = ckdir / "best.ckpt";
            }
        }
        return table;
    };

    const bool augmenting = tcfg.augment.enable_sliding_window || tcfg.augment.enable_splice;
    for (std::size_t step = 1; step <= total_steps; ++step) {
        auto batch_rs = tree.stream("batch", step);
        weights.zero_grad();
        LossBreakdown sums{};

        for (std::size_t slot = 0; slot < tcfg.batch_size; ++slot) {
            const std::uint64_t serial = std::uint64_t(step - 1) * tcfg.batch_size + slot;
            const auto idx = std::size_t(batch_rs.next_int(0, std::int64_t(n) - 1));

            auto aug_rs = tree.stream("augment", serial);
            ClipSample sample = train_clips[idx];
            if (augmenting) {
                // The splice background is any other clip from the split.
                std::size_t bg = idx;
                if (tcfg.augment.enable_splice && n > 1) {
                    bg = std::size_t(aug_rs.next_int(0, std::int64_t(n) - 2));
                    if (bg >= idx) ++bg;
                }
                sample = combined_augment(sample, train_clips[bg], tcfg.augment, aug_rs);
            }

            const auto labels =
                FrameLabelSet::make(sample.span, sample.n_frames(), lcfg.qgh_extension_alpha);
            const auto video = tensor_cast<T, float>(sample.video_features);
            const auto text = tensor_cast<T, float>(sample.text_features);

            auto drop_rs = tree.stream("dropout", serial);
            const auto fwd = multi_scale_forward(video, text, weights, mcfg, true, &drop_rs);
            auto sal_rs = tree.stream("saliency", serial);
            const auto terms = compute_losses(fwd, labels, mcfg, lcfg, sal_rs);

            const auto b = terms.breakdown();
            check_finite(b, step);
            sums.span_loss += b.span_loss;
            sums.qgh_loss += b.qgh_loss;
            sums.npm_loss += b.npm_loss;
            sums.saliency_loss += b.saliency_loss;
            sums.nce_loss += b.nce_loss;
            sums.total += b.total;

            backward(terms.total);
        }

        const auto grads = collect_gradients(weights, 1.0 / double(tcfg.batch_size));
        const double grad_norm = adam_step(weights, grads, state, tcfg);
        if (!std::isfinite(grad_norm))
            throw NumericError("training aborted at step " + std::to_string(step) +
                               ": gradient norm is non-finite");

        if (metrics) {
            const double bs = double(tcfg.batch_size);
            json line;
            line["step"] = step;
            line["span_loss"] = sums.span_loss / bs;
            line["qgh_loss"] = sums.qgh_loss / bs;
            line["npm_loss"] = sums.npm_loss / bs;
            line["saliency_loss"] = sums.saliency_loss / bs;
            line["nce_loss"] = sums.nce_loss / bs;
            line["total_loss"] = sums.total / bs;
            line["lr"] = tcfg.learning_rate;
            line["grad_norm"] = grad_norm;
            *metrics << line.dump() << "\n";
        }

        if (tcfg.eval_every_n_steps != 0 && step % tcfg.eval_every_n_steps == 0 &&
            step != total_steps && !val_clips.empty())
            run_validation(step);
    }

    if (!val_clips.empty()) out.final_val = run_validation(total_steps);
    if (checkpointing) {
        save_checkpoint(ckdir / "final.ckpt", mcfg, weights);
        out.final_checkpoint = ckdir / "final.ckpt";
    }
    out.weights = std::move(weights);
    return out;
}

template AdamState make_adam_state<float>(const ModelWeights<float>&);
template AdamState make_adam_state<double>(const ModelWeights<double>&);
template std::vector<std::vector<double>> collect_gradients<float>(const ModelWeights<float>&,
                                                                   double);
template std::vector<std::vector<double>> collect_gradients<double>(const ModelWeights<double>&,
                                                                    double);
template double adam_step<float>(ModelWeights<float>&, const std::vector<std::vector<double>>&,
                                 AdamState&, const TrainConfig&);
template double adam_step<double>(ModelWeights<double>&, const std::vector<std::vector<double>>&,
                                  AdamState&, const TrainConfig&);
template TrainOutcome<float> train<float>(const std::vector<ClipSample>&,
                                          const std::vector<ClipSample>&, const ModelConfig&,
                                          const TrainConfig&, std::ostream*);
template TrainOutcome<double> train<double>(const std::vector<ClipSample>&,
                                            const std::vector<ClipSample>&, const ModelConfig&,
                                            const TrainConfig&, std::ostream*);

} // namespace msxt
