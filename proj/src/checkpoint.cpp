#include "gmmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gmmt {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr char kMagic[4] = {'G', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

std::vector<std::pair<std::string, Tensor*>> checkpoint_tensors(TrainedModels& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto append = [&out](std::vector<std::pair<std::string, Tensor*>> v) {
        out.insert(out.end(), v.begin(), v.end());
    };
    if (m.method != Method::Base) append(m.net.named_tensors());
    if (m.method == Method::Cgan) append(m.disc.named_tensors());
    if (m.method == Method::Base) append(m.typical.named_tensors());
    append(m.head.named_tensors());
    return out;
}

class Reader {
  public:
    Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    const char* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw DataError(path_ + ": truncated checkpoint");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        std::memcpy(&v, take(8), 8);
        return v;
    }

  private:
    std::string bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt, TrainedModels& models) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    out.push_back(static_cast<char>(ckpt.method));
    for (int v : {ckpt.dcfg.blocks, ckpt.dcfg.base_channels, ckpt.dcfg.feature_channels,
                  ckpt.dcfg.height, ckpt.dcfg.width, ckpt.dcfg.time_embed_dim,
                  ckpt.head_hidden_channels, ckpt.disc_base_channels, ckpt.epoch})
        put_u32(out, static_cast<std::uint32_t>(v));
    put_u64(out, ckpt.step);
    put_u64(out, ckpt.config_ini.size());
    out += ckpt.config_ini;

    auto tensors = checkpoint_tensors(models);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (auto& [name, t] : tensors) {
        const std::uint16_t len = static_cast<std::uint16_t>(name.size());
        out.append(reinterpret_cast<const char*>(&len), 2);
        out += name;
        put_u64(out, static_cast<std::uint64_t>(t->numel()));
        for (real v : t->data) {
            const double d = static_cast<double>(v);
            out.append(reinterpret_cast<const char*>(&d), 8);
        }
    }
    put_u64(out, fnv1a(out));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path, const RunConfig* expect) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw DataError(path + ": not a checkpoint");
    const std::string body = bytes.substr(0, bytes.size() - 8);
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (fnv1a(body) != stored) throw DataError(path + ": checksum mismatch, refusing to load");

    Reader r(body, path);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw DataError(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.method = static_cast<Method>(*r.take(1));
    ckpt.dcfg.blocks = static_cast<int>(r.u32());
    ckpt.dcfg.base_channels = static_cast<int>(r.u32());
    ckpt.dcfg.feature_channels = static_cast<int>(r.u32());
    ckpt.dcfg.height = static_cast<int>(r.u32());
    ckpt.dcfg.width = static_cast<int>(r.u32());
    ckpt.dcfg.time_embed_dim = static_cast<int>(r.u32());
    ckpt.head_hidden_channels = static_cast<int>(r.u32());
    ckpt.disc_base_channels = static_cast<int>(r.u32());
    ckpt.epoch = static_cast<int>(r.u32());
    ckpt.step = r.u64();
    const std::uint64_t cfg_len = r.u64();
    ckpt.config_ini.assign(r.take(cfg_len), cfg_len);

    if (expect) {
        const DenoiserConfig want = expect->denoiser_config();
        if (ckpt.dcfg.blocks != want.blocks || ckpt.dcfg.base_channels != want.base_channels ||
            ckpt.dcfg.feature_channels != want.feature_channels || ckpt.dcfg.height != want.height ||
            ckpt.dcfg.width != want.width || ckpt.dcfg.time_embed_dim != want.time_embed_dim)
            throw ConfigError(path + ": checkpoint network geometry disagrees with the run config");
    }

    // rebuild empty models of the right shape, then fill tensors by name
    TrainedModels& m = ckpt.models;
    m.method = ckpt.method;
    Rng scratch(0);
    m.net = build_denoiser(ckpt.dcfg, scratch);
    m.head = build_track_head(ckpt.dcfg.feature_channels, ckpt.head_hidden_channels, scratch);
    m.typical = build_typical_fusion(ckpt.dcfg.feature_channels, scratch);
    if (ckpt.method == Method::Cgan)
        m.disc = build_discriminator(ckpt.dcfg.feature_channels, ckpt.disc_base_channels,
                                     ckpt.dcfg.height, ckpt.dcfg.width, scratch);

    auto tensors = checkpoint_tensors(m);
    const std::uint32_t count = r.u32();
    if (count != tensors.size())
        throw DataError(path + ": section count mismatch (" + std::to_string(count) + " vs " +
                        std::to_string(tensors.size()) + ")");
    for (auto& [name, t] : tensors) {
        std::uint16_t len = 0;
        std::memcpy(&len, r.take(2), 2);
        const std::string got(r.take(len), len);
        if (got != name) throw DataError(path + ": unexpected section '" + got + "'");
        const std::uint64_t n = r.u64();
        if (n != static_cast<std::uint64_t>(t->numel()))
            throw DataError(path + ": section '" + name + "' size mismatch");
        const char* raw = r.take(n * 8);
        for (std::uint64_t i = 0; i < n; ++i) {
            double d;
            std::memcpy(&d, raw + i * 8, 8);
            t->data[i] = static_cast<real>(d);
        }
    }
    return ckpt;
}

}  // namespace gmmt
