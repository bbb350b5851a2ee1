#include "msxt/commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "msxt/augment.hpp"
#include "msxt/checkpoint.hpp"
#include "msxt/config.hpp"
#include "msxt/dataset.hpp"
#include "msxt/errors.hpp"
#include "msxt/logging.hpp"
#include "msxt/rng.hpp"
#include "msxt/training.hpp"

namespace msxt {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

// Provenance: the config that produced an artifact travels with it, byte for
// byte as the user supplied it.
void echo_config(const std::filesystem::path& config, const std::filesystem::path& out_dir) {
    write_file(out_dir / "run_config.json", read_file(config));
}

} // namespace

void print_metric_table(const RecallTable& t, std::ostream& out) {
    char buf[128];
    out << "      IoU=0.3  IoU=0.5\n";
    std::snprintf(buf, sizeof buf, "R@1  %8.4f %8.4f\n", t.r1_iou03, t.r1_iou05);
    out << buf;
    std::snprintf(buf, sizeof buf, "R@5  %8.4f %8.4f\n", t.r5_iou03, t.r5_iou05);
    out << buf;
}

void cmd_generate(const GenerateOptions& opt) {
    const auto cfg = load_run_config(opt.config);
    const auto splits = build_dataset(cfg.dataset);
    write_dataset(splits, opt.out_dir, cfg.dataset);
    echo_config(opt.config, opt.out_dir);

    std::size_t total = 0;
    for (const auto& [name, clips] : splits) total += clips.size();
    logging::info("generated " + std::to_string(total) + " clips into " + opt.out_dir.string());
}

TrainSummary cmd_train(const TrainOptions& opt) {
    const auto cfg = load_run_config(opt.config);
    const auto manifest = read_manifest(opt.data_dir);
    if (!manifest.splits.count("train"))
        throw IoError("dataset " + opt.data_dir.string() + " has no train split");
    const auto train_clips = read_split(opt.data_dir, manifest, "train");
    const auto val_clips = manifest.splits.count("val")
                               ? read_split(opt.data_dir, manifest, "val")
                               : std::vector<ClipSample>{};

    std::filesystem::create_directories(opt.out_dir);
    echo_config(opt.config, opt.out_dir);

    auto tcfg = cfg.train;
    if (tcfg.checkpoint_dir.empty())
        tcfg.checkpoint_dir = (opt.out_dir / "checkpoints").string();

    std::ofstream metrics(opt.out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + (opt.out_dir / "metrics.jsonl").string());

    logging::info("training on " + std::to_string(train_clips.size()) + " clips, validating on " +
                  std::to_string(val_clips.size()));
    const auto outcome = train<double>(train_clips, val_clips, cfg.model, tcfg, &metrics);

    TrainSummary s;
    s.final_checkpoint = outcome.final_checkpoint;
    s.best_checkpoint = outcome.best_checkpoint;
    s.final_val = outcome.final_val;
    s.best_val = outcome.best_val;
    s.steps = outcome.steps;
    return s;
}

RecallTable cmd_eval(const EvalOptions& opt, std::ostream& table_out) {
    const auto ck = load_checkpoint<double>(opt.checkpoint);
    const auto manifest = read_manifest(opt.data_dir);
    const auto clips = read_split(opt.data_dir, manifest, opt.split);
    if (clips.empty()) throw ContractError("split " + opt.split + " is empty");

    const auto records = predict_split(clips, ck.weights, ck.config, opt.k_max);

    json header;
    header["checkpoint"] = opt.checkpoint.string();
    header["split"] = opt.split;
    header["k_max"] = opt.k_max;
    header["model"] = json::parse(model_config_to_json(ck.config));
    write_predictions(opt.out_path, records, header.dump());

    const auto table = recall_table(records);
    print_metric_table(table, table_out);
    return table;
}

RecallTable cmd_ensemble(const EnsembleOptions& opt, std::ostream& table_out) {
    const auto a = read_predictions(opt.pred_a);
    const auto b = read_predictions(opt.pred_b);
    if (a.size() != b.size())
        throw ContractError("prediction files cover different query counts: " +
                            std::to_string(a.size()) + " vs " + std::to_string(b.size()));

    std::map<std::pair<std::string, std::size_t>, const PredictionRecord*> index;
    for (const auto& r : b) index[{r.clip_id, r.query_idx}] = &r;

    std::vector<PredictionRecord> merged;
    merged.reserve(a.size());
    for (const auto& ra : a) {
        const auto it = index.find({ra.clip_id, ra.query_idx});
        if (it == index.end())
            throw ContractError("query " + ra.clip_id + "#" + std::to_string(ra.query_idx) +
                                " is missing from " + opt.pred_b.string());
        const auto& rb = *it->second;
        if (rb.truth != ra.truth || rb.n_frames != ra.n_frames ||
            rb.fps_feature != ra.fps_feature)
            throw ContractError("prediction files disagree on query " + ra.clip_id + "#" +
                                std::to_string(ra.query_idx));

        const auto m = ensemble_merge({ra.clip_id, ra.candidates}, {rb.clip_id, rb.candidates},
                                      opt.k);
        auto rec = ra;
        rec.candidates = m.candidates;
        merged.push_back(std::move(rec));
    }

    json header;
    header["ensemble"] = json::array({opt.pred_a.string(), opt.pred_b.string()});
    header["k"] = opt.k;
    write_predictions(opt.out_path, merged, header.dump());

    const auto table = recall_table(merged);
    print_metric_table(table, table_out);
    return table;
}

void cmd_augment_preview(const AugmentPreviewOptions& opt, std::ostream& out) {
    const auto cfg = load_run_config(opt.config);
    const auto manifest = read_manifest(opt.data_dir);
    const auto clips = read_split(opt.data_dir, manifest, "train");
    if (clips.empty()) throw ContractError("train split is empty");

    const RngTree tree(cfg.train.seed);
    const auto& acfg = cfg.train.augment;
    const bool augmenting = acfg.enable_sliding_window || acfg.enable_splice;
    for (std::size_t i = 0; i < opt.n; ++i) {
        const auto& clip = clips[i % clips.size()];
        auto rng = tree.stream("preview", i);

        ClipSample after = clip;
        if (augmenting) {
            std::size_t bg = i % clips.size();
            if (acfg.enable_splice && clips.size() > 1) {
                bg = std::size_t(rng.next_int(0, std::int64_t(clips.size()) - 2));
                if (bg >= i % clips.size()) ++bg;
            }
            after = combined_augment(clip, clips[bg], acfg, rng);
        }

        json line;
        line["index"] = i;
        line["clip_id"] = clip.clip_id;
        line["span_before"] = json::array({clip.span.start, clip.span.end});
        line["n_frames_before"] = clip.n_frames();
        line["span_after"] = json::array({after.span.start, after.span.end});
        line["n_frames_after"] = after.n_frames();
        line["span_len"] = span_length(after.span);
        out << line.dump() << "\n";
    }
}

} // namespace msxt
