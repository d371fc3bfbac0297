#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "ssb/tensor.hpp"

// Checkpoint container: named f32 tensors (parameters + BN running stats)
// plus training metadata. On-disk format: magic "SSBCKPT1", little-endian,
// u32 tensor count, then per tensor u32 name length, UTF-8 name, u32 rank,
// u64 dims, f32 payload. Round trips are bitwise-identical.

namespace ssb {

struct Checkpoint {
    std::map<std::string, Tensor<float>> tensors;
    std::uint32_t epoch = 0;
    std::uint64_t seed = 0;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'S', 'S', 'B', 'C', 'K', 'P', 'T', '1'};

inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

template <class T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if (!host_is_little_endian())
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw data_error("checkpoint: truncated file");
    if (!host_is_little_endian())
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open '" + path + "' for writing");
    os.write(detail::kCheckpointMagic, 8);
    // metadata rides along as a reserved tensor
    std::map<std::string, Tensor<float>> all = ckpt.tensors;
    {
        Tensor<float> meta({3});
        meta.data[0] = static_cast<float>(ckpt.epoch);
        meta.data[1] = static_cast<float>(ckpt.seed & 0xffffffffull);
        meta.data[2] = static_cast<float>(ckpt.seed >> 32);
        all.emplace("__meta__", std::move(meta));
    }
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, t] : all) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) detail::write_le<std::uint64_t>(os, d);
        for (float v : t.data) detail::write_le<float>(os, v);
    }
    if (!os) throw data_error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open checkpoint '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw data_error("'" + path + "' is not an SSBCKPT1 checkpoint");
    Checkpoint ckpt;
    std::uint32_t count = detail::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw data_error("checkpoint: truncated file");
        std::uint32_t rank = detail::read_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::read_le<std::uint64_t>(is));
        Tensor<float> t(shape);
        for (float& v : t.data) v = detail::read_le<float>(is);
        if (name == "__meta__") {
            if (t.numel() != 3) throw data_error("checkpoint: bad metadata record");
            ckpt.epoch = static_cast<std::uint32_t>(t.data[0]);
            ckpt.seed = static_cast<std::uint64_t>(t.data[1]) |
                        (static_cast<std::uint64_t>(t.data[2]) << 32);
        } else {
            ckpt.tensors.emplace(std::move(name), std::move(t));
        }
    }
    return ckpt;
}

}  // namespace ssb
