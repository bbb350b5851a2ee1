#include "msxt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "msxt/errors.hpp"

namespace msxt {

void ClipSample::validate() const {
    if (!video_features.defined() || !text_features.defined())
        throw ContractError("clip " + clip_id + ": undefined features");
    if (video_features.rank() != 2 || text_features.rank() != 2)
        throw ContractError("clip " + clip_id + ": features must be rank-2");
    if (n_frames() == 0 || n_tokens() == 0)
        throw ContractError("clip " + clip_id + ": empty feature rows");
    if (span.start > span.end || span.end >= n_frames())
        throw ContractError("clip " + clip_id + ": span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + "] out of range for " +
                            std::to_string(n_frames()) + " frames");
    if (!(fps_feature > 0.0)) throw ContractError("clip " + clip_id + ": fps must be positive");
}

void GeneratorConfig::validate() const {
    if (d_video == 0 || d_text == 0) throw ConfigError("generator: feature widths must be positive");
    if (clip_len_lo == 0 || clip_len_lo > clip_len_hi)
        throw ConfigError("generator: need 1 <= clip_len_lo <= clip_len_hi");
    if (span_len_lo == 0 || span_len_lo > span_len_hi)
        throw ConfigError("generator: need 1 <= span_len_lo <= span_len_hi");
    if (span_len_hi > clip_len_lo)
        throw ConfigError("generator: span_len_hi " + std::to_string(span_len_hi) +
                          " exceeds clip_len_lo " + std::to_string(clip_len_lo) +
                          "; spans must fit every clip");
    if (text_len_lo == 0 || text_len_lo > text_len_hi)
        throw ConfigError("generator: need 1 <= text_len_lo <= text_len_hi");
    if (snr < 0.0) throw ConfigError("generator: snr must be >= 0");
    if (!(fps_feature > 0.0)) throw ConfigError("generator: fps_feature must be positive");
}

ClipGenerator::ClipGenerator(GeneratorConfig cfg) : cfg_(cfg), tree_(cfg.seed) {
    cfg_.validate();
    auto rs = tree_.stream("mixing", 0);
    mixing_.resize(cfg_.d_video * cfg_.d_text);
    for (auto& m : mixing_) m = float(rs.next_normal());
}

ClipSample ClipGenerator::generate(std::size_t index) const {
    auto rs = tree_.stream("clip", std::uint64_t(index));

    // Draw order is frozen: tokens, clip length, span, then frame noise.
    const auto lt = std::size_t(rs.next_int(std::int64_t(cfg_.text_len_lo),
                                            std::int64_t(cfg_.text_len_hi)));
    std::vector<float> text(lt * cfg_.d_text);
    for (auto& x : text) x = float(rs.next_normal());

    // Query signature: mean of the stored (f32) tokens.
    std::vector<double> q(cfg_.d_text, 0.0);
    for (std::size_t j = 0; j < lt; ++j)
        for (std::size_t c = 0; c < cfg_.d_text; ++c) q[c] += double(text[j * cfg_.d_text + c]);
    for (auto& x : q) x /= double(lt);

    // Planted per-frame signal direction, from the stored (f32) mixing matrix.
    std::vector<double> signal(cfg_.d_video, 0.0);
    for (std::size_t r = 0; r < cfg_.d_video; ++r)
        for (std::size_t c = 0; c < cfg_.d_text; ++c)
            signal[r] += double(mixing_[r * cfg_.d_text + c]) * q[c];

    const auto lv = std::size_t(rs.next_int(std::int64_t(cfg_.clip_len_lo),
                                            std::int64_t(cfg_.clip_len_hi)));
    const auto span_len = std::size_t(rs.next_int(std::int64_t(cfg_.span_len_lo),
                                                  std::int64_t(cfg_.span_len_hi)));
    const auto s = std::size_t(rs.next_int(0, std::int64_t(lv - span_len)));
    const MomentSpan span{s, s + span_len - 1};

    std::vector<float> video(lv * cfg_.d_video);
    for (std::size_t f = 0; f < lv; ++f) {
        const bool in_span = f >= span.start && f <= span.end;
        for (std::size_t c = 0; c < cfg_.d_video; ++c) {
            double v = rs.next_normal();
            if (in_span) v += cfg_.snr * signal[c];
            video[f * cfg_.d_video + c] = float(v);
        }
    }

    char id[32];
    std::snprintf(id, sizeof id, "clip_%06zu", index);

    ClipSample clip;
    clip.clip_id = id;
    clip.video_features = Tensor<float>::from_values({lv, cfg_.d_video}, std::move(video));
    clip.text_features = Tensor<float>::from_values({lt, cfg_.d_text}, std::move(text));
    clip.span = span;
    clip.fps_feature = cfg_.fps_feature;
    return clip;
}

void DatasetConfig::validate() const {
    generator.validate();
    if (n_train + n_val + n_test == 0) throw ConfigError("dataset: no clips requested");
}

std::map<std::string, std::vector<ClipSample>> build_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    ClipGenerator gen(cfg.generator);
    std::map<std::string, std::vector<ClipSample>> splits;
    std::size_t serial = 0;
    for (const auto& [name, count] :
         std::initializer_list<std::pair<const char*, std::size_t>>{
             {"train", cfg.n_train}, {"val", cfg.n_val}, {"test", cfg.n_test}}) {
        auto& clips = splits[name];
        clips.reserve(count);
        for (std::size_t i = 0; i < count; ++i) clips.push_back(gen.generate(serial++));
    }
    return splits;
}

namespace {

constexpr char kMagic[4] = {'C', 'L', 'P', 'F'};
constexpr std::uint32_t kClipFormatVersion = 1;
constexpr std::uint32_t kManifestVersion = 1;

std::uint64_t fnv1a64_bytes(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((unsigned char)(v & 0xff));
    out.push_back((unsigned char)((v >> 8) & 0xff));
    out.push_back((unsigned char)((v >> 16) & 0xff));
    out.push_back((unsigned char)((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

void put_f32_rows(std::vector<unsigned char>& out, const std::vector<float>& rows) {
    static_assert(sizeof(float) == 4);
    for (float v : rows) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    }
}

// One packed clip block: magic, version, l_v, d_v, L_t, d_t, then video rows,
// then text rows, all little-endian f32.
std::vector<unsigned char> pack_clip(const ClipSample& clip) {
    std::vector<unsigned char> out;
    const std::size_t lv = clip.n_frames(), dv = clip.video_features.dim(1);
    const std::size_t lt = clip.n_tokens(), dt = clip.text_features.dim(1);
    out.reserve(24 + 4 * (lv * dv + lt * dt));
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kClipFormatVersion);
    put_u32(out, std::uint32_t(lv));
    put_u32(out, std::uint32_t(dv));
    put_u32(out, std::uint32_t(lt));
    put_u32(out, std::uint32_t(dt));
    put_f32_rows(out, clip.video_features.value());
    put_f32_rows(out, clip.text_features.value());
    return out;
}

nlohmann::json span_to_json(const MomentSpan& s) {
    return nlohmann::json{{"start", s.start}, {"end", s.end}};
}

MomentSpan span_from_json(const nlohmann::json& j) {
    return MomentSpan{j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
}

nlohmann::json generator_to_json(const GeneratorConfig& g) {
    return nlohmann::json{{"seed", g.seed},
                          {"snr", g.snr},
                          {"d_video", g.d_video},
                          {"d_text", g.d_text},
                          {"clip_len", {g.clip_len_lo, g.clip_len_hi}},
                          {"span_len", {g.span_len_lo, g.span_len_hi}},
                          {"text_len", {g.text_len_lo, g.text_len_hi}},
                          {"fps_feature", g.fps_feature}};
}

GeneratorConfig generator_from_json(const nlohmann::json& j) {
    GeneratorConfig g;
    g.seed = j.at("seed").get<std::uint64_t>();
    g.snr = j.at("snr").get<double>();
    g.d_video = j.at("d_video").get<std::size_t>();
    g.d_text = j.at("d_text").get<std::size_t>();
    g.clip_len_lo = j.at("clip_len").at(0).get<std::size_t>();
    g.clip_len_hi = j.at("clip_len").at(1).get<std::size_t>();
    g.span_len_lo = j.at("span_len").at(0).get<std::size_t>();
    g.span_len_hi = j.at("span_len").at(1).get<std::size_t>();
    g.text_len_lo = j.at("text_len").at(0).get<std::size_t>();
    g.text_len_hi = j.at("text_len").at(1).get<std::size_t>();
    g.fps_feature = j.at("fps_feature").get<double>();
    return g;
}

} // namespace

DatasetManifest write_dataset(const std::map<std::string, std::vector<ClipSample>>& splits,
                              const std::filesystem::path& dir,
                              const std::optional<DatasetConfig>& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("dataset: cannot create directory " + dir.string() + ": " + ec.message());

    DatasetManifest manifest;
    manifest.version = kManifestVersion;
    manifest.config = cfg;

    std::set<std::string> seen_ids;
    for (const auto& [split, clips] : splits) {
        auto& records = manifest.splits[split];
        if (clips.empty()) continue;

        const std::string file = split + ".clpf";
        std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("dataset: cannot open " + (dir / file).string() + " for writing");

        std::uint64_t offset = 0;
        for (const ClipSample& clip : clips) {
            clip.validate();
            if (!seen_ids.insert(clip.clip_id).second)
                throw ContractError("dataset: duplicate clip_id " + clip.clip_id);
            const std::size_t dv = clip.video_features.dim(1);
            const std::size_t dt = clip.text_features.dim(1);
            if (manifest.d_video == 0) {
                manifest.d_video = dv;
                manifest.d_text = dt;
            } else if (manifest.d_video != dv || manifest.d_text != dt) {
                throw ContractError("dataset: clip " + clip.clip_id +
                                    " feature widths differ from the rest of the dataset");
            }

            const auto block = pack_clip(clip);
            out.write(reinterpret_cast<const char*>(block.data()),
                      std::streamsize(block.size()));

            ClipRecord rec;
            rec.clip_id = clip.clip_id;
            rec.file = file;
            rec.offset = offset;
            rec.size = block.size();
            rec.n_frames = clip.n_frames();
            rec.n_tokens = clip.n_tokens();
            rec.span = clip.span;
            rec.fps_feature = clip.fps_feature;
            rec.checksum = fnv1a64_bytes(block.data(), block.size());
            records.push_back(std::move(rec));
            offset += block.size();
        }
        if (!out) throw IoError("dataset: write failed for " + (dir / file).string());
    }

    nlohmann::json j;
    j["version"] = manifest.version;
    j["d_video"] = manifest.d_video;
    j["d_text"] = manifest.d_text;
    if (manifest.config) {
        j["generator"] = generator_to_json(manifest.config->generator);
        j["counts"] = {{"train", manifest.config->n_train},
                       {"val", manifest.config->n_val},
                       {"test", manifest.config->n_test}};
    }
    auto& jsplits = j["splits"] = nlohmann::json::object();
    for (const auto& [split, records] : manifest.splits) {
        auto& arr = jsplits[split] = nlohmann::json::array();
        for (const ClipRecord& r : records) {
            arr.push_back({{"clip_id", r.clip_id},
                           {"file", r.file},
                           {"offset", r.offset},
                           {"size", r.size},
                           {"n_frames", r.n_frames},
                           {"n_tokens", r.n_tokens},
                           {"span", span_to_json(r.span)},
                           {"fps_feature", r.fps_feature},
                           {"checksum", r.checksum}});
        }
    }

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("dataset: cannot write " + (dir / "manifest.json").string());
    mf << j.dump(2) << "\n";
    if (!mf.flush()) throw IoError("dataset: write failed for manifest.json");
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("dataset: cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset: malformed manifest.json: " + std::string(e.what()));
    }

    DatasetManifest m;
    try {
        m.version = j.at("version").get<std::uint32_t>();
        if (m.version != kManifestVersion)
            throw IoError("dataset: unsupported manifest version " + std::to_string(m.version));
        m.d_video = j.at("d_video").get<std::size_t>();
        m.d_text = j.at("d_text").get<std::size_t>();
        if (j.contains("generator")) {
            DatasetConfig cfg;
            cfg.generator = generator_from_json(j.at("generator"));
            if (j.contains("counts")) {
                cfg.n_train = j.at("counts").at("train").get<std::size_t>();
                cfg.n_val = j.at("counts").at("val").get<std::size_t>();
                cfg.n_test = j.at("counts").at("test").get<std::size_t>();
            }
            m.config = cfg;
        }
        for (const auto& [split, arr] : j.at("splits").items()) {
            auto& records = m.splits[split];
            for (const auto& ji : arr) {
                ClipRecord r;
                r.clip_id = ji.at("clip_id").get<std::string>();
                r.file = ji.at("file").get<std::string>();
                r.offset = ji.at("offset").get<std::uint64_t>();
                r.size = ji.at("size").get<std::uint64_t>();
                r.n_frames = ji.at("n_frames").get<std::size_t>();
                r.n_tokens = ji.at("n_tokens").get<std::size_t>();
                r.span = span_from_json(ji.at("span"));
                r.fps_feature = ji.at("fps_feature").get<double>();
                r.checksum = ji.at("checksum").get<std::uint64_t>();
                records.push_back(std::move(r));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset: manifest.json missing fields: " + std::string(e.what()));
    }
    return m;
}

std::vector<ClipSample> read_split(const std::filesystem::path& dir,
                                   const DatasetManifest& manifest, const std::string& split) {
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end())
        throw IoError("dataset: split '" + split + "' not in manifest");

    std::vector<ClipSample> clips;
    clips.reserve(it->second.size());
    std::map<std::string, std::vector<unsigned char>> files;
    for (const ClipRecord& rec : it->second) {
        auto fit = files.find(rec.file);
        if (fit == files.end()) {
            std::ifstream in(dir / rec.file, std::ios::binary);
            if (!in) throw IoError("dataset: cannot open " + (dir / rec.file).string());
            std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                             std::istreambuf_iterator<char>()};
            fit = files.emplace(rec.file, std::move(bytes)).first;
        }
        const auto& bytes = fit->second;

        if (rec.offset + rec.size > bytes.size() || rec.size < 24)
            throw IoError("dataset: clip " + rec.clip_id + ": " + rec.file +
                          " truncated (need " + std::to_string(rec.offset + rec.size) +
                          " bytes, have " + std::to_string(bytes.size()) + ")");
        const unsigned char* p = bytes.data() + rec.offset;
        if (fnv1a64_bytes(p, rec.size) != rec.checksum)
            throw IoError("dataset: clip " + rec.clip_id + ": checksum mismatch in " + rec.file);
        if (std::memcmp(p, kMagic, 4) != 0)
            throw IoError("dataset: clip " + rec.clip_id + ": bad magic in " + rec.file);
        if (get_u32(p + 4) != kClipFormatVersion)
            throw IoError("dataset: clip " + rec.clip_id + ": unsupported clip format version " +
                          std::to_string(get_u32(p + 4)));
        const std::size_t lv = get_u32(p + 8), dv = get_u32(p + 12);
        const std::size_t lt = get_u32(p + 16), dt = get_u32(p + 20);
        if (lv != rec.n_frames || lt != rec.n_tokens || dv != manifest.d_video ||
            dt != manifest.d_text)
            throw IoError("dataset: clip " + rec.clip_id + ": header shape [" +
                          std::to_string(lv) + "x" + std::to_string(dv) + ", " +
                          std::to_string(lt) + "x" + std::to_string(dt) +
                          "] disagrees with manifest");
        if (rec.size != 24 + 4 * (lv * dv + lt * dt))
            throw IoError("dataset: clip " + rec.clip_id + ": record size " +
                          std::to_string(rec.size) + " disagrees with header shape");

        auto read_f32 = [&](std::size_t byte_off, std::size_t count) {
            std::vector<float> vals(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint32_t bits = get_u32(p + byte_off + 4 * i);
                std::memcpy(&vals[i], &bits, 4);
            }
            return vals;
        };

        ClipSample clip;
        clip.clip_id = rec.clip_id;
        clip.video_features =
            Tensor<float>::from_values({lv, dv}, read_f32(24, lv * dv));
        clip.text_features =
            Tensor<float>::from_values({lt, dt}, read_f32(24 + 4 * lv * dv, lt * dt));
        clip.span = rec.span;
        clip.fps_feature = rec.fps_feature;
        clip.validate();
        clips.push_back(std::move(clip));
    }
    return clips;
}

std::map<std::string, std::vector<ClipSample>> read_dataset(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    std::map<std::string, std::vector<ClipSample>> out;
    for (const auto& [split, records] : manifest.splits) out[split] = read_split(dir, manifest, split);
    return out;
}

MomentSpan seconds_to_frames(double t_start, double t_end, double fps_feature,
                             std::size_t n_frames) {
    if (!(fps_feature > 0.0)) throw ContractError("seconds_to_frames: fps must be positive");
    if (n_frames == 0) throw ContractError("seconds_to_frames: empty clip");
    if (t_end < t_start) throw ContractError("seconds_to_frames: end time precedes start time");

    const double s_raw = std::floor(t_start * fps_feature);
    const double e_raw = std::ceil(t_end * fps_feature) - 1.0;
    auto clamp_idx = [&](double v) {
        return std::size_t(std::clamp(v, 0.0, double(n_frames - 1)));
    };
    const std::size_t s = clamp_idx(s_raw);
    const std::size_t e = std::max(s, clamp_idx(e_raw));
    return {s, e};
}

} // namespace msxt
