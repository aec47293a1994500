#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include "mmic/core.hpp"

namespace mmic {

// .mmt container: "MMT1" | u8 rank | rank x u32 extents (LE) | u8 dtype
// (0 = f32, 1 = f64) | row-major payload (LE). One tensor per file.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <typename T>
constexpr uint8_t mmt_dtype_tag() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else {
        static_assert(std::is_same_v<T, double>, "mmt supports f32 and f64");
        return 1;
    }
}

}  // namespace detail

template <typename T>
void write_mmt(std::ostream& os, const TensorData<T>& t) {
    if (t.shape.size() > 255) throw FormatError("write_mmt: rank too large");
    os.write("MMT1", 4);
    uint8_t rank = static_cast<uint8_t>(t.shape.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int e : t.shape) {
        if (e < 0) throw FormatError("write_mmt: negative extent");
        detail::put_u32(os, static_cast<uint32_t>(e));
    }
    uint8_t tag = detail::mmt_dtype_tag<T>();
    os.write(reinterpret_cast<const char*>(&tag), 1);
    static_assert(std::endian::native == std::endian::little, "payload written as-is");
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(T)));
    if (!os) throw FormatError("write_mmt: write failed");
}

template <typename T>
void write_mmt(const std::string& path, const TensorData<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("write_mmt: cannot open " + path);
    write_mmt(os, t);
}

template <typename T>
TensorData<T> read_mmt(std::istream& is, const std::string& what = "<stream>") {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MMT1", 4) != 0)
        throw FormatError("read_mmt: bad magic in " + what);
    uint8_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    Shape shape(rank);
    uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
        uint32_t e = detail::get_u32(is);
        shape[i] = static_cast<int>(e);
        count *= e;
        if (count > (uint64_t(1) << 33))
            throw FormatError("read_mmt: extent overflow in " + what);
    }
    uint8_t tag = 0;
    is.read(reinterpret_cast<char*>(&tag), 1);
    if (!is) throw FormatError("read_mmt: truncated header in " + what);
    if (tag != detail::mmt_dtype_tag<T>())
        throw FormatError("read_mmt: dtype tag " + std::to_string(tag) + " in " + what +
                          " does not match requested element type");
    std::vector<T> values(count);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(T)));
    if (static_cast<uint64_t>(is.gcount()) != count * sizeof(T))
        throw FormatError("read_mmt: truncated payload in " + what);
    return TensorData<T>(std::move(shape), std::move(values));
}

template <typename T>
TensorData<T> read_mmt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("read_mmt: cannot open " + path);
    return read_mmt<T>(is, path);
}

}  // namespace mmic
