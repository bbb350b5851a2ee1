#include "msxt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "msxt/errors.hpp"

namespace msxt {

namespace {

std::vector<double> softmax_double(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

} // namespace

template <typename T>
PredictionSet decode_topk(const Tensor<T>& start_logits, const Tensor<T>& end_logits,
                          std::size_t k, std::size_t max_len) {
    if (start_logits.rank() != 1 || end_logits.rank() != 1 ||
        start_logits.dim(0) != end_logits.dim(0))
        throw ShapeError("decode_topk: logits must be rank-1 of equal length, got " +
                         shape_str(start_logits.shape()) + " and " +
                         shape_str(end_logits.shape()));
    if (k == 0) throw ContractError("decode_topk: k must be >= 1");
    if (max_len == 0) throw ContractError("decode_topk: max_len must be >= 1");

    const std::size_t lv = start_logits.dim(0);
    std::vector<double> sl(lv), el(lv);
    for (std::size_t i = 0; i < lv; ++i) {
        sl[i] = double(start_logits.value()[i]);
        el[i] = double(end_logits.value()[i]);
    }
    const auto ps = softmax_double(sl);
    const auto pe = softmax_double(el);

    PredictionSet out;
    out.candidates.reserve(lv * std::min(max_len, lv));
    for (std::size_t s = 0; s < lv; ++s) {
        const std::size_t e_hi = std::min(lv - 1, s + max_len - 1);
        for (std::size_t e = s; e <= e_hi; ++e)
            out.candidates.push_back({s, e, ps[s] * pe[e]});
    }
    std::stable_sort(out.candidates.begin(), out.candidates.end(), candidate_better);
    if (out.candidates.size() > k) out.candidates.resize(k);
    return out;
}

double temporal_iou(const MomentSpan& a, const MomentSpan& b) {
    const std::size_t inter_lo = std::max(a.start, b.start);
    const std::size_t inter_hi = std::min(a.end, b.end);
    if (inter_hi < inter_lo) return 0.0;
    const double inter = double(inter_hi - inter_lo + 1);
    const double uni = double(span_length(a)) + double(span_length(b)) - inter;
    return inter / uni;
}

double recall_at_k(const std::vector<PredictionSet>& predictions,
                   const std::vector<MomentSpan>& truths, std::size_t k, double iou_threshold) {
    if (predictions.size() != truths.size())
        throw ContractError("recall_at_k: " + std::to_string(predictions.size()) +
                            " prediction sets vs " + std::to_string(truths.size()) + " truths");
    if (predictions.empty()) throw ContractError("recall_at_k: no queries");
    if (k == 0) throw ContractError("recall_at_k: k must be >= 1");

    std::size_t hits = 0;
    for (std::size_t q = 0; q < predictions.size(); ++q) {
        const auto& cands = predictions[q].candidates;
        const std::size_t top = std::min(k, cands.size());
        for (std::size_t i = 0; i < top; ++i) {
            if (temporal_iou({cands[i].start, cands[i].end}, truths[q]) >= iou_threshold) {
                ++hits;
                break;
            }
        }
    }
    return double(hits) / double(predictions.size());
}

PredictionSet ensemble_merge(const PredictionSet& a, const PredictionSet& b, std::size_t k) {
    if (a.clip_id != b.clip_id)
        throw ContractError("ensemble_merge: clip ids differ: " + a.clip_id + " vs " + b.clip_id);
    if (k == 0) throw ContractError("ensemble_merge: k must be >= 1");

    PredictionSet out;
    out.clip_id = a.clip_id;
    out.candidates.reserve(a.candidates.size() + b.candidates.size());
    out.candidates.insert(out.candidates.end(), a.candidates.begin(), a.candidates.end());
    out.candidates.insert(out.candidates.end(), b.candidates.begin(), b.candidates.end());
    std::stable_sort(out.candidates.begin(), out.candidates.end(), candidate_better);
    if (out.candidates.size() > k) out.candidates.resize(k);
    return out;
}

RecallTable recall_table(const std::vector<PredictionRecord>& records) {
    std::vector<PredictionSet> preds;
    std::vector<MomentSpan> truths;
    preds.reserve(records.size());
    truths.reserve(records.size());
    for (const auto& r : records) {
        preds.push_back({r.clip_id, r.candidates});
        truths.push_back(r.truth);
    }
    RecallTable t;
    t.r1_iou03 = recall_at_k(preds, truths, 1, 0.3);
    t.r1_iou05 = recall_at_k(preds, truths, 1, 0.5);
    t.r5_iou03 = recall_at_k(preds, truths, 5, 0.3);
    t.r5_iou05 = recall_at_k(preds, truths, 5, 0.5);
    return t;
}

template <typename T>
std::vector<PredictionRecord> predict_split(const std::vector<ClipSample>& clips,
                                            const ModelWeights<T>& weights, const ModelConfig& cfg,
                                            std::size_t k_max) {
    NoGradGuard no_grad;
    std::vector<PredictionRecord> records;
    records.reserve(clips.size());
    for (std::size_t q = 0; q < clips.size(); ++q) {
        const ClipSample& clip = clips[q];
        auto video = tensor_cast<T>(clip.video_features);
        auto text = tensor_cast<T>(clip.text_features);
        auto out = multi_scale_forward(video, text, weights, cfg, false, nullptr);
        auto decoded = decode_topk(out.start_logits, out.end_logits, k_max,
                                   cfg.max_span_len_frames);

        PredictionRecord rec;
        rec.clip_id = clip.clip_id;
        rec.query_idx = q;
        rec.candidates = std::move(decoded.candidates);
        rec.truth = clip.span;
        rec.fps_feature = clip.fps_feature;
        rec.n_frames = clip.n_frames();
        records.push_back(std::move(rec));
    }
    return records;
}

MomentSpan span_from_report_seconds(double start_s, double end_s, double fps) {
    if (!(fps > 0.0)) throw ContractError("span_from_report_seconds: fps must be positive");
    const double s = std::round(start_s * fps);
    const double e = std::round(end_s * fps) - 1.0;
    if (s < 0.0 || e < s)
        throw ContractError("span_from_report_seconds: degenerate span [" +
                            std::to_string(start_s) + ", " + std::to_string(end_s) + "] s");
    return {std::size_t(s), std::size_t(e)};
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records,
                       const std::string& header_json) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("predictions: cannot open " + path.string() + " for writing");
    if (!header_json.empty()) {
        nlohmann::json hdr;
        try {
            hdr = nlohmann::json::parse(header_json);
        } catch (const nlohmann::json::exception& e) {
            throw ContractError("predictions: header is not valid JSON: " + std::string(e.what()));
        }
        out << nlohmann::json{{"run_config", hdr}}.dump() << "\n";
    }
    for (const auto& r : records) {
        nlohmann::json j;
        j["clip_id"] = r.clip_id;
        j["query_idx"] = r.query_idx;
        j["fps_feature"] = r.fps_feature;
        j["n_frames"] = r.n_frames;
        j["truth_s"] = {frame_to_start_seconds(r.truth.start, r.fps_feature),
                        frame_to_end_seconds(r.truth.end, r.fps_feature)};
        auto& cands = j["candidates"] = nlohmann::json::array();
        for (const auto& c : r.candidates)
            cands.push_back({frame_to_start_seconds(c.start, r.fps_feature),
                             frame_to_end_seconds(c.end, r.fps_feature), c.score});
        out << j.dump() << "\n";
    }
    if (!out.flush()) throw IoError("predictions: write failed for " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("predictions: cannot open " + path.string());

    std::vector<PredictionRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("predictions: " + path.string() + " line " + std::to_string(line_no) +
                          " is not valid JSON: " + std::string(e.what()));
        }
        if (j.contains("run_config")) continue;
        try {
            PredictionRecord r;
            r.clip_id = j.at("clip_id").get<std::string>();
            r.query_idx = j.at("query_idx").get<std::size_t>();
            r.fps_feature = j.at("fps_feature").get<double>();
            r.n_frames = j.at("n_frames").get<std::size_t>();
            r.truth = span_from_report_seconds(j.at("truth_s").at(0).get<double>(),
                                               j.at("truth_s").at(1).get<double>(),
                                               r.fps_feature);
            for (const auto& c : j.at("candidates")) {
                const auto span = span_from_report_seconds(c.at(0).get<double>(),
                                                           c.at(1).get<double>(), r.fps_feature);
                r.candidates.push_back({span.start, span.end, c.at(2).get<double>()});
            }
            if (r.truth.end >= r.n_frames)
                throw ContractError("truth span exceeds n_frames");
            for (std::size_t i = 0; i < r.candidates.size(); ++i) {
                if (r.candidates[i].end >= r.n_frames)
                    throw ContractError("candidate span exceeds n_frames");
                if (i > 0 && candidate_better(r.candidates[i], r.candidates[i - 1]))
                    throw ContractError("candidates not sorted");
            }
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw IoError("predictions: " + path.string() + " line " + std::to_string(line_no) +
                          ": " + std::string(e.what()));
        }
    }
    return records;
}

std::string read_predictions_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("predictions: cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            return "";
        }
        if (j.contains("run_config")) return j.at("run_config").dump();
        return "";
    }
    return "";
}

template PredictionSet decode_topk<float>(const Tensor<float>&, const Tensor<float>&, std::size_t,
                                          std::size_t);
template PredictionSet decode_topk<double>(const Tensor<double>&, const Tensor<double>&,
                                           std::size_t, std::size_t);
template std::vector<PredictionRecord> predict_split<float>(const std::vector<ClipSample>&,
                                                            const ModelWeights<float>&,
                                                            const ModelConfig&, std::size_t);
template std::vector<PredictionRecord> predict_split<double>(const std::vector<ClipSample>&,
                                                             const ModelWeights<double>&,
                                                             const ModelConfig&, std::size_t);

} // namespace msxt
