#include "msxt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "msxt/config.hpp"
#include "msxt/errors.hpp"

namespace msxt {
namespace {

constexpr char kMagic[4] = {'M', 'S', 'X', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a64_bytes(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= std::uint64_t(static_cast<unsigned char>(data[i]));
        h *= 0x100000001b3ULL;
    }
    return h;
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

// Bounds-checked sequential reader over the file image.
struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;
    std::string where;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint " + where + ": truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelWeights<T>& weights) {
    cfg.validate();
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);

    const std::string cfg_json = model_config_to_json(cfg);
    put_u32(buf, std::uint32_t(cfg_json.size()));
    buf.append(cfg_json);

    put_u32(buf, std::uint32_t(weights.parameter_count()));
    weights.for_each_parameter([&](const std::string& name, const Tensor<T>& t) {
        put_u32(buf, std::uint32_t(name.size()));
        buf.append(name);
        put_u32(buf, std::uint32_t(t.shape().size()));
        for (const std::size_t d : t.shape()) put_u32(buf, std::uint32_t(d));
        for (const T x : t.value()) put_f32(buf, float(x));
    });
    put_u64(buf, fnv1a64_bytes(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint not found or unreadable: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::string where = path.string();
    if (buf.size() < 4 + 4 + 4 + 4 + 8) throw IoError("checkpoint " + where + ": truncated");

    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= std::uint64_t(static_cast<unsigned char>(buf[buf.size() - 8 + i])) << (8 * i);
    if (stored != fnv1a64_bytes(buf.data(), buf.size() - 8))
        throw IoError("checkpoint " + where + ": checksum mismatch");

    Cursor cur{buf, 0, where};
    if (cur.bytes(4) != std::string(kMagic, 4))
        throw IoError("checkpoint " + where + ": bad magic");
    if (const auto v = cur.u32(); v != kVersion)
        throw IoError("checkpoint " + where + ": unsupported version " + std::to_string(v));

    const auto cfg_len = cur.u32();
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(cur.bytes(cfg_len));
    } catch (const ConfigError& e) {
        throw IoError("checkpoint " + where + ": embedded config invalid: " + e.what());
    }

    Checkpoint<T> out{cfg, init_weights<T>(cfg, 0)};
    const auto n_params = cur.u32();
    if (n_params != out.weights.parameter_count())
        throw IoError("checkpoint " + where + ": expected " +
                      std::to_string(out.weights.parameter_count()) + " parameters, file has " +
                      std::to_string(n_params));

    out.weights.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
        const auto name_len = cur.u32();
        if (cur.bytes(name_len) != name)
            throw IoError("checkpoint " + where + ": parameter order mismatch at " + name);
        const auto rank = cur.u32();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = cur.u32();
        if (dims != t.shape())
            throw IoError("checkpoint " + where + ": shape mismatch for " + name);
        auto& val = t.leaf_value();
        for (auto& x : val) x = T(cur.f32());
    });

    if (cur.pos != buf.size() - 8)
        throw IoError("checkpoint " + where + ": trailing bytes after parameters");
    return out;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelConfig&,
                                     const ModelWeights<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelConfig&,
                                      const ModelWeights<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

} // namespace msxt
