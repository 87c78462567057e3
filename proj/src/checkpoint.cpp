#include "sparseagg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "sparseagg/common.hpp"

namespace sparseagg {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'G', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw ConfigError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kVersion);
    put_u64(out, ckpt.config_text.size());
    out += ckpt.config_text;
    put_u64(out, ckpt.entries.size());
    std::uint64_t offset = 0;
    for (const auto& e : ckpt.entries) {
        put_u64(out, e.name.size());
        out += e.name;
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (const int d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        put_u64(out, offset);
        offset += e.values.size() * 4;
    }
    put_u64(out, offset);
    for (const auto& e : ckpt.entries) {
        for (const float v : e.values) put_f32(out, v);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot write file: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw ConfigError("checkpoint: short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot open file: " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{data};
    if (r.bytes(8) != std::string(kMagic, 8)) throw ConfigError("checkpoint: bad magic in " + path);
    if (r.u32() != kVersion) throw ConfigError("checkpoint: unsupported version in " + path);
    Checkpoint ckpt;
    ckpt.config_text = r.bytes(r.u64());
    const std::uint64_t count = r.u64();
    std::vector<std::uint64_t> offsets;
    std::vector<std::uint64_t> counts;
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u64());
        const std::uint32_t rank = r.u32();
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<int>(r.u32()));
            n *= static_cast<std::uint64_t>(e.shape.back());
        }
        offsets.push_back(r.u64());
        counts.push_back(n);
        ckpt.entries.push_back(std::move(e));
    }
    const std::uint64_t payload_len = r.u64();
    const std::size_t payload_start = r.pos;
    r.need(payload_len);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto& e = ckpt.entries[static_cast<std::size_t>(i)];
        if (offsets[static_cast<std::size_t>(i)] + counts[static_cast<std::size_t>(i)] * 4 > payload_len) {
            throw ConfigError("checkpoint: entry '" + e.name + "' overruns the payload");
        }
        e.values.resize(static_cast<std::size_t>(counts[static_cast<std::size_t>(i)]));
        const char* src = data.data() + payload_start + offsets[static_cast<std::size_t>(i)];
        for (auto& v : e.values) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[b])) << (8 * b);
            std::memcpy(&v, &bits, 4);
            src += 4;
        }
    }
    return ckpt;
}

Checkpoint checkpoint_from_store(const ParamStore<float>& store, const std::string& config_text) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    for (int i = 0; i < store.count(); ++i) {
        const auto& p = store.param(i);
        ckpt.entries.push_back(CheckpointEntry{p.name, p.value.shape, p.value.v});
    }
    return ckpt;
}

void checkpoint_into_store(const Checkpoint& ckpt, ParamStore<float>& store) {
    if (static_cast<int>(ckpt.entries.size()) != store.count()) {
        throw ConfigError("checkpoint: parameter count mismatch: file has " +
                          std::to_string(ckpt.entries.size()) + ", model has " +
                          std::to_string(store.count()));
    }
    for (int i = 0; i < store.count(); ++i) {
        auto& p = store.param(i);
        const auto& e = ckpt.entries[static_cast<std::size_t>(i)];
        if (e.name != p.name || e.shape != p.value.shape) {
            throw ConfigError("checkpoint: manifest mismatch at '" + e.name + "' vs model '" +
                              p.name + "'");
        }
        p.value.v = e.values;
    }
}

}  // namespace sparseagg
