#pragma once

#include "semeq/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Model checkpoint container. Binary layout, all integers little-endian u32
// unless noted:
//   magic "SEMW" (4 bytes) | version u8 = 1 | count u32
//   then per entry: name_len u32 | name bytes (UTF-8) | rank u32 |
//                   extents u32[rank] | data f32[product(extents)]
// Entries are written in insertion order and read back in file order.

namespace semeq {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline float get_f32(std::istream& is) {
    const std::uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    os.write("SEMW", 4);
    const unsigned char version = 1;
    os.write(reinterpret_cast<const char*>(&version), 1);
    detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        std::int64_t count = 1;
        for (int d : e.shape) {
            detail::put_u32(os, static_cast<std::uint32_t>(d));
            count *= d;
        }
        if (count != static_cast<std::int64_t>(e.data.size()))
            throw CheckpointError("checkpoint: entry '" + e.name + "' data does not match shape");
        for (float v : e.data) detail::put_f32(os, v);
    }
    if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SEMW", 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    unsigned char version = 0;
    is.read(reinterpret_cast<char*>(&version), 1);
    if (!is || version != 1)
        throw CheckpointError("checkpoint: unsupported version in " + path);
    const std::uint32_t count = detail::get_u32(is);
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t ei = 0; ei < count; ++ei) {
        CheckpointEntry e;
        const std::uint32_t name_len = detail::get_u32(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        if (!is) throw CheckpointError("checkpoint: truncated name");
        const std::uint32_t rank = detail::get_u32(is);
        std::int64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint32_t d = detail::get_u32(is);
            if (d == 0) throw CheckpointError("checkpoint: zero extent in '" + e.name + "'");
            e.shape.push_back(static_cast<int>(d));
            n *= d;
        }
        e.data.resize(static_cast<std::size_t>(n));
        for (auto& v : e.data) v = detail::get_f32(is);
        entries.push_back(std::move(e));
    }
    return entries;
}

// Named-tensor helpers for models whose parameters live in Tensor<float>.

inline CheckpointEntry entry_from(const std::string& name, const Tensor<float>& t) {
    return CheckpointEntry{name, t.shape, t.data};
}

inline void entry_into(const CheckpointEntry& e, Tensor<float>& t) {
    if (e.shape != t.shape)
        throw CheckpointError("checkpoint: shape mismatch for '" + e.name + "': file " +
                              shape_str(e.shape) + " vs model " + shape_str(t.shape));
    t.data = e.data;
}

// Loads entries into a name->tensor map; every model tensor must be present.
inline void load_into(const std::string& path, std::map<std::string, Tensor<float>*> tensors) {
    auto entries = load_checkpoint(path);
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (auto& [name, t] : tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint: missing tensor '" + name + "' in " + path);
        entry_into(*it->second, *t);
    }
}

}  // namespace semeq
