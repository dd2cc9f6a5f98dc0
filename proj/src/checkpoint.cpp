#include "mergelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mergelab::harness {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'G', 'L'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<uint64_t>(v));
}

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    Reader(const std::string& bytes) : bytes_(bytes) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    uint8_t u8() {
        need(1);
        return static_cast<unsigned char>(bytes_[pos_++]);
    }

    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    size_t pos() const { return pos_; }

private:
    void need(size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw IntegrityError("checkpoint truncated");
        }
    }
    const std::string& bytes_;
    size_t pos_ = 0;
};

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const model::TransformerModel& m, const std::string& phase,
                     const std::filesystem::path& path) {
    const auto named = m.named_params();
    std::string payload;
    for (const auto& [name, t] : named) {
        for (double v : t->data) {
            put_f64(payload, v);
        }
    }
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    const auto& cfg = m.config();
    put_u32(out, static_cast<uint32_t>(cfg.n_layers));
    put_u32(out, static_cast<uint32_t>(cfg.n_heads));
    put_u32(out, static_cast<uint32_t>(cfg.d_model));
    put_u32(out, static_cast<uint32_t>(cfg.d_mlp));
    put_u32(out, static_cast<uint32_t>(cfg.vocab_size));
    put_u32(out, static_cast<uint32_t>(cfg.context_length));
    put_u64(out, cfg.seed);
    out.push_back(cfg.train_layernorm ? 1 : 0);
    put_string(out, phase);
    put_u64(out, fnv1a(payload));
    put_u32(out, static_cast<uint32_t>(named.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : named) {
        put_string(out, name);
        put_u32(out, static_cast<uint32_t>(t->shape.size()));
        for (int e : t->shape) {
            put_u32(out, static_cast<uint32_t>(e));
        }
        put_u64(out, offset);
        offset += t->data.size() * sizeof(double);
    }
    out += payload;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IntegrityError("checkpoint: bad magic in " + path.string());
    }
    Reader r(bytes);
    r.u32();  // magic, already checked
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.config.n_layers = static_cast<int>(r.u32());
    ck.config.n_heads = static_cast<int>(r.u32());
    ck.config.d_model = static_cast<int>(r.u32());
    ck.config.d_mlp = static_cast<int>(r.u32());
    ck.config.vocab_size = static_cast<int>(r.u32());
    ck.config.context_length = static_cast<int>(r.u32());
    ck.config.seed = r.u64();
    ck.config.train_layernorm = (r.u8() & 1) != 0;
    ck.phase = r.str();
    const uint64_t stored_hash = r.u64();
    const uint32_t n_tensors = r.u32();

    struct Entry {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
    };
    std::vector<Entry> manifest;
    manifest.reserve(n_tensors);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        Entry e;
        e.name = r.str();
        const uint32_t ndim = r.u32();
        for (uint32_t d = 0; d < ndim; ++d) {
            e.shape.push_back(static_cast<int>(r.u32()));
        }
        e.offset = r.u64();
        manifest.push_back(std::move(e));
    }
    const size_t payload_start = r.pos();
    const std::string payload = bytes.substr(payload_start);
    if (fnv1a(payload) != stored_hash) {
        throw IntegrityError("checkpoint: payload hash mismatch in " + path.string());
    }
    ck.content_hash = stored_hash;

    ck.model = std::make_shared<model::TransformerModel>(ck.config);
    auto named = ck.model->named_params();
    if (named.size() != manifest.size()) {
        throw IntegrityError("checkpoint: tensor count mismatch");
    }
    for (size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        const Entry& e = manifest[i];
        if (e.name != name || e.shape != t->shape) {
            throw IntegrityError("checkpoint: manifest entry mismatch for " + name);
        }
        const size_t need = e.offset + t->data.size() * sizeof(double);
        if (need > payload.size()) {
            throw IntegrityError("checkpoint: payload truncated for " + name);
        }
        const char* src = payload.data() + e.offset;
        for (double& v : t->data) {
            uint64_t u = 0;
            for (int b = 0; b < 8; ++b) {
                u |= static_cast<uint64_t>(static_cast<unsigned char>(src[b])) << (8 * b);
            }
            v = std::bit_cast<double>(u);
            src += 8;
        }
    }
    return ck;
}

}  // namespace mergelab::harness
