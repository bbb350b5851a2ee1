#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <msxt/errors.hpp>
#include <msxt/evaluation.hpp>

using namespace msxt;
using Td = Tensor<double>;
namespace fs = std::filesystem;

namespace {

const RngTree kRng(0x44c1e68fu);

Td logits_of_probs(std::vector<double> probs) {
    const std::size_t n = probs.size();
    for (auto& p : probs) p = std::log(p);
    return Td::from_values({n}, std::move(probs));
}

Td randn_vec(std::size_t n, RngStream& rs, double sc = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = sc * rs.next_normal();
    return Td::from_values({n}, std::move(v));
}

// Independent top-k: exhaustive pair list plus repeated best-candidate
// extraction, with the ranking written as explicit nested conditionals.
std::vector<Candidate> topk_oracle(const std::vector<double>& sl, const std::vector<double>& el,
                                   std::size_t k, std::size_t max_len) {
    const std::size_t lv = sl.size();
    const double smax = *std::max_element(sl.begin(), sl.end());
    const double emax = *std::max_element(el.begin(), el.end());
    double sz = 0.0, ez = 0.0;
    for (double x : sl) sz += std::exp(x - smax);
    for (double x : el) ez += std::exp(x - emax);

    std::vector<Candidate> pool;
    for (std::size_t s = 0; s < lv; ++s)
        for (std::size_t e = s; e < lv && e - s + 1 <= max_len; ++e)
            pool.push_back({s, e,
                            (std::exp(sl[s] - smax) / sz) * (std::exp(el[e] - emax) / ez)});

    std::vector<Candidate> out;
    while (!pool.empty() && out.size() < k) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i) {
            const auto& a = pool[i];
            const auto& b = pool[best];
            bool wins = false;
            if (a.score > b.score)
                wins = true;
            else if (a.score == b.score && a.start < b.start)
                wins = true;
            else if (a.score == b.score && a.start == b.start &&
                     a.end - a.start < b.end - b.start)
                wins = true;
            if (wins) best = i;
        }
        out.push_back(pool[best]);
        pool.erase(pool.begin() + std::ptrdiff_t(best));
    }
    return out;
}

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove(path);
    }
    ~TempFile() { fs::remove(path); }
};

} // namespace

TEST_CASE("top-k decoding scores boundary pairs by probability product") {
    auto sl = logits_of_probs({0.7, 0.2, 0.1});
    auto el = logits_of_probs({0.1, 0.2, 0.7});

    auto top1 = decode_topk(sl, el, 1, 3);
    REQUIRE(top1.candidates.size() == 1);
    CHECK(top1.candidates[0].start == 0);
    CHECK(top1.candidates[0].end == 2);
    CHECK(top1.candidates[0].score == doctest::Approx(0.49).epsilon(1e-9));

    auto top3 = decode_topk(sl, el, 3, 3);
    REQUIRE(top3.candidates.size() == 3);
    CHECK(top3.candidates[0].start == 0);
    CHECK(top3.candidates[0].end == 2);
    // (0,1) and (1,2) tie at 0.14; earlier start wins.
    CHECK(top3.candidates[1].start == 0);
    CHECK(top3.candidates[1].end == 1);
    CHECK(top3.candidates[2].start == 1);
    CHECK(top3.candidates[2].end == 2);
    CHECK(top3.candidates[1].score == doctest::Approx(0.14).epsilon(1e-9));
    CHECK(top3.candidates[1].score == top3.candidates[2].score);
}

TEST_CASE("top-k decoding with unit max_len orders uniform ties by start") {
    auto uniform = Td::zeros({4});
    auto out = decode_topk(uniform, uniform, 10, 1);
    REQUIRE(out.candidates.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out.candidates[i].start == i);
        CHECK(out.candidates[i].end == i);
        CHECK(out.candidates[i].score == 0.0625);
    }
}

TEST_CASE("top-k decoding matches the exhaustive oracle") {
    for (int trial = 0; trial < 200; ++trial) {
        auto rs = kRng.stream("decode-oracle", std::uint64_t(trial));
        const auto lv = std::size_t(rs.next_int(1, 64));
        const auto max_len = std::size_t(rs.next_int(1, 80));
        const auto k = std::size_t(rs.next_int(1, 12));
        std::vector<double> sl(lv), el(lv);
        for (auto& x : sl) x = 2.0 * rs.next_normal();
        for (auto& x : el) x = 2.0 * rs.next_normal();

        auto got = decode_topk(Td::from_values({lv}, std::vector<double>(sl)),
                               Td::from_values({lv}, std::vector<double>(el)), k, max_len);
        auto expect = topk_oracle(sl, el, k, max_len);
        REQUIRE(got.candidates.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(got.candidates[i].start == expect[i].start);
            CHECK(got.candidates[i].end == expect[i].end);
            CHECK(got.candidates[i].score == expect[i].score);
        }
    }
}

TEST_CASE("top-k decoding contract errors") {
    auto l = Td::zeros({4});
    CHECK_THROWS_AS(decode_topk(l, l, 0, 3), ContractError);
    CHECK_THROWS_AS(decode_topk(l, l, 3, 0), ContractError);
    CHECK_THROWS_AS(decode_topk(l, Td::zeros({5}), 3, 3), ShapeError);
}

TEST_CASE("temporal IoU on inclusive intervals") {
    CHECK(temporal_iou({3, 8}, {3, 8}) == 1.0);
    CHECK(temporal_iou({0, 9}, {5, 14}) == 1.0 / 3.0);
    CHECK(temporal_iou({0, 3}, {4, 9}) == 0.0);
    CHECK(temporal_iou({3, 3}, {3, 3}) == 1.0);
    CHECK(temporal_iou({0, 0}, {0, 1}) == 0.5);

    for (int trial = 0; trial < 200; ++trial) {
        auto rs = kRng.stream("iou", std::uint64_t(trial));
        auto draw = [&] {
            const auto s = std::size_t(rs.next_int(0, 30));
            const auto e = std::size_t(rs.next_int(std::int64_t(s), 40));
            return MomentSpan{s, e};
        };
        const auto a = draw(), b = draw();
        const double ab = temporal_iou(a, b);
        CHECK(ab == temporal_iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK((ab == 1.0) == (a == b));
    }
}

TEST_CASE("recall matches a brute-force recomputation and is monotone") {
    std::vector<PredictionSet> preds;
    std::vector<MomentSpan> truths;
    for (int q = 0; q < 200; ++q) {
        auto rs = kRng.stream("recall", std::uint64_t(q));
        const auto lv = std::size_t(rs.next_int(10, 60));
        const auto ts = std::size_t(rs.next_int(0, std::int64_t(lv) - 1));
        const auto te = std::size_t(rs.next_int(std::int64_t(ts), std::int64_t(lv) - 1));
        truths.push_back({ts, te});

        PredictionSet p;
        p.clip_id = "q" + std::to_string(q);
        const auto n = std::size_t(rs.next_int(1, 5));
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = std::size_t(rs.next_int(0, std::int64_t(lv) - 1));
            const auto e = std::size_t(rs.next_int(std::int64_t(s), std::int64_t(lv) - 1));
            p.candidates.push_back({s, e, rs.next_uniform()});
        }
        std::stable_sort(p.candidates.begin(), p.candidates.end(), candidate_better);
        preds.push_back(std::move(p));
    }

    for (const std::size_t k : {std::size_t(1), std::size_t(3), std::size_t(5)}) {
        for (const double thr : {0.3, 0.5, 0.7}) {
            std::size_t hits = 0;
            for (std::size_t q = 0; q < preds.size(); ++q) {
                bool hit = false;
                for (std::size_t i = 0; i < preds[q].candidates.size() && i < k; ++i) {
                    const auto& c = preds[q].candidates[i];
                    const double iou = temporal_iou({c.start, c.end}, truths[q]);
                    if (iou >= thr) hit = true;
                }
                hits += hit ? 1 : 0;
            }
            CHECK(recall_at_k(preds, truths, k, thr) == double(hits) / double(preds.size()));
        }
    }

    // Monotone: non-decreasing in k, non-increasing in threshold.
    for (std::size_t k = 2; k <= 5; ++k)
        CHECK(recall_at_k(preds, truths, k, 0.3) >= recall_at_k(preds, truths, k - 1, 0.3));
    for (const double thr : {0.2, 0.4, 0.6, 0.8})
        CHECK(recall_at_k(preds, truths, 5, thr) <= recall_at_k(preds, truths, 5, thr - 0.1));

    // Perfect top-1 predictions hit at every threshold.
    std::vector<PredictionSet> perfect;
    for (const auto& t : truths) perfect.push_back({"p", {{t.start, t.end, 1.0}}});
    CHECK(recall_at_k(perfect, truths, 1, 0.999) == 1.0);

    CHECK_THROWS_AS(recall_at_k(perfect, std::vector<MomentSpan>{}, 1, 0.3), ContractError);
    CHECK_THROWS_AS(recall_at_k({}, {}, 1, 0.3), ContractError);
}

TEST_CASE("ensemble merge follows the sort-and-truncate procedure") {
    PredictionSet a{"clip", {{0, 4, 0.9}, {10, 14, 0.5}}};
    PredictionSet b{"clip", {{2, 6, 0.7}, {20, 22, 0.6}}};
    auto m = ensemble_merge(a, b, 3);
    REQUIRE(m.candidates.size() == 3);
    CHECK(m.candidates[0].score == 0.9);
    CHECK(m.candidates[1].score == 0.7);
    CHECK(m.candidates[2].score == 0.6);

    // Empty second set: first truncated to k.
    auto solo = ensemble_merge(a, {"clip", {}}, 1);
    REQUIRE(solo.candidates.size() == 1);
    CHECK(solo.candidates[0].score == 0.9);

    // Self-merge duplicates every candidate, then truncates.
    PredictionSet five{"clip", {}};
    for (std::size_t i = 0; i < 5; ++i)
        five.candidates.push_back({i, i + 1, 1.0 - 0.1 * double(i)});
    auto dup = ensemble_merge(five, five, 5);
    REQUIRE(dup.candidates.size() == 5);
    CHECK(dup.candidates[0].start == five.candidates[0].start);
    CHECK(dup.candidates[1].start == five.candidates[0].start);
    CHECK(dup.candidates[2].start == five.candidates[1].start);
    CHECK(dup.candidates[3].start == five.candidates[1].start);
    CHECK(dup.candidates[4].start == five.candidates[2].start);

    CHECK_THROWS_AS(ensemble_merge(a, {"other", {}}, 3), ContractError);
    CHECK_THROWS_AS(ensemble_merge(a, b, 0), ContractError);
}

TEST_CASE("ensemble merge preserves scores as a sorted multiset subset") {
    for (int trial = 0; trial < 100; ++trial) {
        auto rs = kRng.stream("ens", std::uint64_t(trial));
        auto draw_set = [&] {
            PredictionSet p{"clip", {}};
            const auto n = std::size_t(rs.next_int(0, 5));
            for (std::size_t i = 0; i < n; ++i) {
                const auto s = std::size_t(rs.next_int(0, 20));
                const auto e = std::size_t(rs.next_int(std::int64_t(s), 25));
                // Coarse scores force real ties across the two sets.
                p.candidates.push_back({s, e, double(rs.next_int(0, 4)) / 4.0});
            }
            std::stable_sort(p.candidates.begin(), p.candidates.end(), candidate_better);
            return p;
        };
        auto a = draw_set(), b = draw_set();
        auto m = ensemble_merge(a, b, 5);

        CHECK(m.candidates.size() == std::min<std::size_t>(5, a.candidates.size() +
                                                                  b.candidates.size()));
        for (std::size_t i = 1; i < m.candidates.size(); ++i)
            CHECK(!candidate_better(m.candidates[i], m.candidates[i - 1]));

        std::vector<double> in_scores, out_scores;
        for (const auto& c : a.candidates) in_scores.push_back(c.score);
        for (const auto& c : b.candidates) in_scores.push_back(c.score);
        for (const auto& c : m.candidates) out_scores.push_back(c.score);
        std::sort(in_scores.begin(), in_scores.end());
        std::sort(out_scores.begin(), out_scores.end());
        CHECK(std::includes(in_scores.begin(), in_scores.end(), out_scores.begin(),
                            out_scores.end()));
    }
}

TEST_CASE("recall table reports the four operating points") {
    // One query hit at IoU 1.0 by rank 1, one hit only at rank 3 with IoU 1/3.
    std::vector<PredictionRecord> recs(2);
    recs[0].clip_id = "a";
    recs[0].truth = {0, 9};
    recs[0].candidates = {{0, 9, 0.9}};
    recs[0].n_frames = 20;
    recs[1].clip_id = "b";
    recs[1].query_idx = 1;
    recs[1].truth = {0, 9};
    recs[1].candidates = {{15, 19, 0.9}, {12, 19, 0.8}, {5, 14, 0.7}};
    recs[1].n_frames = 20;

    auto t = recall_table(recs);
    CHECK(t.r1_iou03 == 0.5);
    CHECK(t.r1_iou05 == 0.5);
    CHECK(t.r5_iou03 == 1.0); // rank-3 candidate has IoU exactly 1/3
    CHECK(t.r5_iou05 == 0.5);
}

TEST_CASE("split prediction runs the model and decodes per clip") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 1;
    cfg.num_segments = 2;
    cfg.d_video_in = 6;
    cfg.d_text_in = 5;
    cfg.ffn_mult = 2;
    cfg.dropout_p = 0.0;
    cfg.max_span_len_frames = 6;
    cfg.span_pred_layers = 1;
    cfg.max_positions = 64;
    auto weights = init_weights<double>(cfg, 3);

    GeneratorConfig gcfg;
    gcfg.seed = 21;
    gcfg.d_video = 6;
    gcfg.d_text = 5;
    gcfg.clip_len_lo = 10;
    gcfg.clip_len_hi = 16;
    gcfg.span_len_lo = 2;
    gcfg.span_len_hi = 4;
    gcfg.text_len_lo = 2;
    gcfg.text_len_hi = 4;
    ClipGenerator gen(gcfg);
    std::vector<ClipSample> clips;
    for (std::size_t i = 0; i < 5; ++i) clips.push_back(gen.generate(i));

    auto recs = predict_split(clips, weights, cfg, 5);
    REQUIRE(recs.size() == 5);
    for (std::size_t q = 0; q < 5; ++q) {
        CHECK(recs[q].clip_id == clips[q].clip_id);
        CHECK(recs[q].query_idx == q);
        CHECK(recs[q].truth == clips[q].span);
        CHECK(recs[q].n_frames == clips[q].n_frames());
        REQUIRE(recs[q].candidates.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            const auto& c = recs[q].candidates[i];
            CHECK(c.end < recs[q].n_frames);
            CHECK(c.end - c.start + 1 <= cfg.max_span_len_frames);
            if (i > 0) CHECK(!candidate_better(c, recs[q].candidates[i - 1]));
        }
    }

    // Eval is pure: a second pass gives identical records.
    auto again = predict_split(clips, weights, cfg, 5);
    for (std::size_t q = 0; q < 5; ++q) {
        CHECK(again[q].candidates.size() == recs[q].candidates.size());
        for (std::size_t i = 0; i < recs[q].candidates.size(); ++i) {
            CHECK(again[q].candidates[i].start == recs[q].candidates[i].start);
            CHECK(again[q].candidates[i].end == recs[q].candidates[i].end);
            CHECK(again[q].candidates[i].score == recs[q].candidates[i].score);
        }
    }
}

TEST_CASE("second-based reporting converts back to exact frame indices") {
    for (const double fps : {2.0, 1.875, 29.97, 0.5}) {
        for (int trial = 0; trial < 60; ++trial) {
            auto rs = kRng.stream("sec", std::uint64_t(trial) * 8 +
                                             std::uint64_t(fps * 100));
            const auto s = std::size_t(rs.next_int(0, 200));
            const auto e = std::size_t(rs.next_int(std::int64_t(s), 220));
            const auto back = span_from_report_seconds(frame_to_start_seconds(s, fps),
                                                       frame_to_end_seconds(e, fps), fps);
            CHECK(back == MomentSpan{s, e});
        }
    }
    CHECK_THROWS_AS(span_from_report_seconds(1.0, 1.0, 2.0), ContractError);
    CHECK_THROWS_AS(span_from_report_seconds(0.0, 1.0, 0.0), ContractError);
}

TEST_CASE("prediction files round-trip records and header") {
    std::vector<PredictionRecord> recs;
    for (int q = 0; q < 20; ++q) {
        auto rs = kRng.stream("predio", std::uint64_t(q));
        PredictionRecord r;
        r.clip_id = "clip_" + std::to_string(q);
        r.query_idx = std::size_t(q);
        r.fps_feature = (q % 2 == 0) ? 2.0 : 1.875;
        r.n_frames = 64;
        const auto ts = std::size_t(rs.next_int(0, 50));
        r.truth = {ts, std::size_t(rs.next_int(std::int64_t(ts), 63))};
        const auto n = std::size_t(rs.next_int(1, 5));
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = std::size_t(rs.next_int(0, 60));
            const auto e = std::size_t(rs.next_int(std::int64_t(s), 63));
            r.candidates.push_back({s, e, rs.next_uniform()});
        }
        std::stable_sort(r.candidates.begin(), r.candidates.end(), candidate_better);
        recs.push_back(std::move(r));
    }

    TempFile file("msxt_predictions.jsonl");
    write_predictions(file.path, recs, R"({"seed": 7, "note": "run"})");

    CHECK(read_predictions_header(file.path) != "");
    CHECK(read_predictions_header(file.path).find("\"seed\":7") != std::string::npos);

    auto loaded = read_predictions(file.path);
    REQUIRE(loaded.size() == recs.size());
    for (std::size_t q = 0; q < recs.size(); ++q) {
        CHECK(loaded[q].clip_id == recs[q].clip_id);
        CHECK(loaded[q].query_idx == recs[q].query_idx);
        CHECK(loaded[q].fps_feature == recs[q].fps_feature);
        CHECK(loaded[q].n_frames == recs[q].n_frames);
        CHECK(loaded[q].truth == recs[q].truth);
        REQUIRE(loaded[q].candidates.size() == recs[q].candidates.size());
        for (std::size_t i = 0; i < recs[q].candidates.size(); ++i) {
            CHECK(loaded[q].candidates[i].start == recs[q].candidates[i].start);
            CHECK(loaded[q].candidates[i].end == recs[q].candidates[i].end);
            CHECK(loaded[q].candidates[i].score == recs[q].candidates[i].score);
        }
    }

    // Header is optional.
    TempFile plain("msxt_predictions_plain.jsonl");
    write_predictions(plain.path, recs);
    CHECK(read_predictions_header(plain.path) == "");
    CHECK(read_predictions(plain.path).size() == recs.size());
}

TEST_CASE("malformed prediction files fail loudly") {
    TempFile file("msxt_predictions_bad.jsonl");

    SUBCASE("invalid JSON line") {
        std::ofstream out(file.path);
        out << "{ nope\n";
        out.close();
        CHECK_THROWS_AS(read_predictions(file.path), IoError);
    }
    SUBCASE("missing field") {
        std::ofstream out(file.path);
        out << R"({"clip_id":"x","query_idx":0})" << "\n";
        out.close();
        CHECK_THROWS_AS(read_predictions(file.path), IoError);
    }
    SUBCASE("unsorted candidates") {
        std::ofstream out(file.path);
        out << R"({"clip_id":"x","query_idx":0,"fps_feature":2.0,"n_frames":10,)"
            << R"("truth_s":[0.0,1.0],"candidates":[[0.0,1.0,0.2],[0.0,1.0,0.9]]})" << "\n";
        out.close();
        CHECK_THROWS_AS(read_predictions(file.path), IoError);
    }
    SUBCASE("candidate beyond the clip") {
        std::ofstream out(file.path);
        out << R"({"clip_id":"x","query_idx":0,"fps_feature":2.0,"n_frames":4,)"
            << R"("truth_s":[0.0,1.0],"candidates":[[0.0,5.0,0.2]]})" << "\n";
        out.close();
        CHECK_THROWS_AS(read_predictions(file.path), IoError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_predictions(file.path), IoError); }
}
