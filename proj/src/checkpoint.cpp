#include "cryoquery/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cryoquery/errors.hpp"

namespace cq::ckpt {

namespace {

constexpr char kMagic[8] = {'C', 'Q', 'C', 'K', 'P', 'T', '1', '\0'};

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw CorruptFileError("checkpoint: unexpected end of file");
    return v;
}

void put_string(std::ofstream& f, const std::string& s) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& f) {
    const auto n = get<std::uint32_t>(f);
    if (n > (1u << 20)) throw CorruptFileError("checkpoint: implausible string length");
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw CorruptFileError("checkpoint: unexpected end of file");
    return s;
}

void put_floats(std::ofstream& f, const std::vector<float>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::ifstream& f, std::vector<float>& v) {
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!f) throw CorruptFileError("checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const ad::ParamStore& store, const ad::AdamOptimizer* opt,
                     const CheckpointInfo& info, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(f, info.version);
    put<std::uint64_t>(f, info.config_hash);
    put<std::int32_t>(f, info.epoch);
    put<std::int32_t>(f, info.stage);
    put<std::uint32_t>(f, static_cast<std::uint32_t>(store.size()));
    for (size_t i = 0; i < store.size(); ++i) {
        const ad::Param& p = store.at(i);
        put_string(f, p.name);
        put<std::uint32_t>(f, static_cast<std::uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) put<std::int32_t>(f, d);
        put_floats(f, p.value.values);
    }
    put<std::uint8_t>(f, opt ? 1 : 0);
    if (opt) {
        for (size_t i = 0; i < store.size(); ++i) {
            const auto& s = opt->state(i);
            put<std::int64_t>(f, s.step);
            put_floats(f, s.m);
            put_floats(f, s.v);
        }
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

CheckpointInfo load_checkpoint(ad::ParamStore& store, ad::AdamOptimizer* opt,
                               const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CorruptFileError("'" + path + "': not a checkpoint file");
    CheckpointInfo info;
    info.version = get<std::uint32_t>(f);
    if (info.version != 1)
        throw UnsupportedFormatError("checkpoint version " + std::to_string(info.version));
    info.config_hash = get<std::uint64_t>(f);
    info.epoch = get<std::int32_t>(f);
    info.stage = get<std::int32_t>(f);
    const auto n = get<std::uint32_t>(f);
    if (n != store.size())
        throw ValidationError("checkpoint: parameter count mismatch (file " + std::to_string(n) +
                              ", model " + std::to_string(store.size()) + ")");
    for (size_t i = 0; i < store.size(); ++i) {
        ad::Param& p = store.at(i);
        const std::string name = get_string(f);
        if (name != p.name)
            throw ValidationError("checkpoint: parameter '" + name + "' does not match model '" +
                                  p.name + "'");
        const auto ndim = get<std::uint32_t>(f);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = get<std::int32_t>(f);
        if (shape != p.value.shape)
            throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
        get_floats(f, p.value.values);
    }
    const auto has_opt = get<std::uint8_t>(f);
    if (has_opt) {
        if (opt) {
            for (size_t i = 0; i < store.size(); ++i) {
                auto& s = opt->state(i);
                s.step = get<std::int64_t>(f);
                get_floats(f, s.m);
                get_floats(f, s.v);
            }
        }
    }
    return info;
}

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CorruptFileError("'" + path + "': not a checkpoint file");
    CheckpointInfo info;
    info.version = get<std::uint32_t>(f);
    info.config_hash = get<std::uint64_t>(f);
    info.epoch = get<std::int32_t>(f);
    info.stage = get<std::int32_t>(f);
    return info;
}

}  // namespace cq::ckpt
