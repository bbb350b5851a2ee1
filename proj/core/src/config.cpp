#include "msxt/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "msxt/errors.hpp"

namespace msxt {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

// Typed field access; every getter names the full key path on error.
std::size_t as_size(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected a non-negative integer");
    if (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)
        fail(path, "expected a non-negative integer");
    return j.get<std::size_t>();
}

std::uint64_t as_u64(const json& j, const std::string& path) {
    if (!(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0)))
        fail(path, "expected a non-negative integer");
    return j.get<std::uint64_t>();
}

double as_double(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
}

void parse_model(const json& j, ModelConfig& out) {
    expect_object(j, "model");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "model." + key;
        if (key == "d_model")
            out.d_model = as_size(val, p);
        else if (key == "num_heads")
            out.num_heads = as_size(val, p);
        else if (key == "num_layers")
            out.num_layers = as_size(val, p);
        else if (key == "num_segments")
            out.num_segments = as_size(val, p);
        else if (key == "d_video_in")
            out.d_video_in = as_size(val, p);
        else if (key == "d_text_in")
            out.d_text_in = as_size(val, p);
        else if (key == "ffn_mult")
            out.ffn_mult = as_size(val, p);
        else if (key == "dropout_p")
            out.dropout_p = as_double(val, p);
        else if (key == "max_span_len_frames")
            out.max_span_len_frames = as_size(val, p);
        else if (key == "contrastive_tau")
            out.contrastive_tau = as_double(val, p);
        else if (key == "span_pred_layers")
            out.span_pred_layers = as_size(val, p);
        else if (key == "max_positions")
            out.max_positions = as_size(val, p);
        else if (key == "layer_norm_eps")
            out.layer_norm_eps = as_double(val, p);
        else
            fail(p, "unknown key");
    }
}

void parse_train(const json& j, TrainConfig& out) {
    expect_object(j, "train");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "train." + key;
        if (key == "epochs")
            out.epochs = as_size(val, p);
        else if (key == "batch_size")
            out.batch_size = as_size(val, p);
        else if (key == "learning_rate")
            out.learning_rate = as_double(val, p);
        else if (key == "adam_beta1")
            out.adam_beta1 = as_double(val, p);
        else if (key == "adam_beta2")
            out.adam_beta2 = as_double(val, p);
        else if (key == "adam_eps")
            out.adam_eps = as_double(val, p);
        else if (key == "weight_decay")
            out.weight_decay = as_double(val, p);
        else if (key == "grad_clip_norm")
            out.grad_clip_norm = as_double(val, p);
        else if (key == "seed")
            out.seed = as_u64(val, p);
        else if (key == "enable_nce")
            out.enable_nce = as_bool(val, p);
        else if (key == "nce_reduction") {
            const auto s = as_string(val, p);
            if (s == "mean")
                out.nce_reduction = NceReduction::kMean;
            else if (s == "sum")
                out.nce_reduction = NceReduction::kSum;
            else
                fail(p, "expected \"mean\" or \"sum\"");
        } else if (key == "eval_every_n_steps")
            out.eval_every_n_steps = as_size(val, p);
        else if (key == "checkpoint_dir")
            out.checkpoint_dir = as_string(val, p);
        else
            fail(p, "unknown key");
    }
}

void parse_augment(const json& j, AugmentConfig& out) {
    expect_object(j, "augment");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "augment." + key;
        if (key == "ratio_lo")
            out.ratio_lo = as_double(val, p);
        else if (key == "ratio_hi")
            out.ratio_hi = as_double(val, p);
        else if (key == "splice_probability")
            out.splice_probability = as_double(val, p);
        else if (key == "enable_sliding_window")
            out.enable_sliding_window = as_bool(val, p);
        else if (key == "enable_splice")
            out.enable_splice = as_bool(val, p);
        else
            fail(p, "unknown key");
    }
}

void parse_generator(const json& j, GeneratorConfig& out) {
    expect_object(j, "dataset.generator");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "dataset.generator." + key;
        if (key == "seed")
            out.seed = as_u64(val, p);
        else if (key == "snr")
            out.snr = as_double(val, p);
        else if (key == "d_video")
            out.d_video = as_size(val, p);
        else if (key == "d_text")
            out.d_text = as_size(val, p);
        else if (key == "clip_len_lo")
            out.clip_len_lo = as_size(val, p);
        else if (key == "clip_len_hi")
            out.clip_len_hi = as_size(val, p);
        else if (key == "span_len_lo")
            out.span_len_lo = as_size(val, p);
        else if (key == "span_len_hi")
            out.span_len_hi = as_size(val, p);
        else if (key == "text_len_lo")
            out.text_len_lo = as_size(val, p);
        else if (key == "text_len_hi")
            out.text_len_hi = as_size(val, p);
        else if (key == "fps_feature")
            out.fps_feature = as_double(val, p);
        else
            fail(p, "unknown key");
    }
}

void parse_dataset(const json& j, DatasetConfig& out) {
    expect_object(j, "dataset");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "dataset." + key;
        if (key == "generator")
            parse_generator(val, out.generator);
        else if (key == "n_train")
            out.n_train = as_size(val, p);
        else if (key == "n_val")
            out.n_val = as_size(val, p);
        else if (key == "n_test")
            out.n_test = as_size(val, p);
        else
            fail(p, "unknown key");
    }
}

void parse_eval(const json& j, EvalConfig& out) {
    expect_object(j, "eval");
    for (const auto& [key, val] : j.items()) {
        const std::string p = "eval." + key;
        if (key == "k_max")
            out.k_max = as_size(val, p);
        else
            fail(p, "unknown key");
    }
}

json model_to_json(const ModelConfig& m) {
    json j;
    j["d_model"] = m.d_model;
    j["num_heads"] = m.num_heads;
    j["num_layers"] = m.num_layers;
    j["num_segments"] = m.num_segments;
    j["d_video_in"] = m.d_video_in;
    j["d_text_in"] = m.d_text_in;
    j["ffn_mult"] = m.ffn_mult;
    j["dropout_p"] = m.dropout_p;
    j["max_span_len_frames"] = m.max_span_len_frames;
    j["contrastive_tau"] = m.contrastive_tau;
    j["span_pred_layers"] = m.span_pred_layers;
    j["max_positions"] = m.max_positions;
    j["layer_norm_eps"] = m.layer_norm_eps;
    return j;
}

json train_to_json(const TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["learning_rate"] = t.learning_rate;
    j["adam_beta1"] = t.adam_beta1;
    j["adam_beta2"] = t.adam_beta2;
    j["adam_eps"] = t.adam_eps;
    j["weight_decay"] = t.weight_decay;
    j["grad_clip_norm"] = t.grad_clip_norm;
    j["seed"] = t.seed;
    j["enable_nce"] = t.enable_nce;
    j["nce_reduction"] = t.nce_reduction == NceReduction::kMean ? "mean" : "sum";
    j["eval_every_n_steps"] = t.eval_every_n_steps;
    j["checkpoint_dir"] = t.checkpoint_dir;
    return j;
}

json augment_to_json(const AugmentConfig& a) {
    json j;
    j["ratio_lo"] = a.ratio_lo;
    j["ratio_hi"] = a.ratio_hi;
    j["splice_probability"] = a.splice_probability;
    j["enable_sliding_window"] = a.enable_sliding_window;
    j["enable_splice"] = a.enable_splice;
    return j;
}

json dataset_to_json(const DatasetConfig& d) {
    json g;
    g["seed"] = d.generator.seed;
    g["snr"] = d.generator.snr;
    g["d_video"] = d.generator.d_video;
    g["d_text"] = d.generator.d_text;
    g["clip_len_lo"] = d.generator.clip_len_lo;
    g["clip_len_hi"] = d.generator.clip_len_hi;
    g["span_len_lo"] = d.generator.span_len_lo;
    g["span_len_hi"] = d.generator.span_len_hi;
    g["text_len_lo"] = d.generator.text_len_lo;
    g["text_len_hi"] = d.generator.text_len_hi;
    g["fps_feature"] = d.generator.fps_feature;
    json j;
    j["generator"] = std::move(g);
    j["n_train"] = d.n_train;
    j["n_val"] = d.n_val;
    j["n_test"] = d.n_test;
    return j;
}

} // namespace

void EvalConfig::validate() const {
    if (k_max == 0) throw ConfigError("config: eval.k_max must be >= 1");
}

RunConfig::RunConfig() {
    dataset.n_train = 500;
    dataset.n_val = 100;
    dataset.n_test = 100;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    dataset.validate();
    eval.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_object(root, "(top level)");

    RunConfig cfg;
    for (const auto& [key, val] : root.items()) {
        if (key == "model")
            parse_model(val, cfg.model);
        else if (key == "train")
            parse_train(val, cfg.train);
        else if (key == "augment")
            parse_augment(val, cfg.train.augment);
        else if (key == "dataset")
            parse_dataset(val, cfg.dataset);
        else if (key == "eval")
            parse_eval(val, cfg.eval);
        else
            fail(key, "unknown key");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config file not found or unreadable: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json root;
    root["model"] = model_to_json(cfg.model);
    root["train"] = train_to_json(cfg.train);
    root["augment"] = augment_to_json(cfg.train.augment);
    root["dataset"] = dataset_to_json(cfg.dataset);
    root["eval"] = json{{"k_max", cfg.eval.k_max}};
    return root.dump(2) + "\n";
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return model_to_json(cfg).dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig cfg;
    parse_model(j, cfg);
    cfg.validate();
    return cfg;
}

} // namespace msxt
