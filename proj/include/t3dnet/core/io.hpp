#pragma once

// Little-endian byte helpers and whole-file I/O.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"

namespace t3d {

namespace io {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}
inline std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}
inline float get_f32(std::span<const std::uint8_t> b, std::size_t at) { return std::bit_cast<float>(get_u32(b, at)); }

/// Bounds-checked cursor over a byte buffer; every failure reports its offset.
class Reader {
   public:
    explicit Reader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

    void need(std::size_t n, const std::string& what) const {
        if (b_.size() - pos_ < n)
            throw FormatError("truncated " + what + ": expected " + std::to_string(n) + " bytes, got " +
                                  std::to_string(b_.size() - pos_),
                              pos_);
    }
    std::uint32_t u32(const std::string& what) {
        need(4, what);
        auto v = get_u32(b_, pos_);
        pos_ += 4;
        return v;
    }
    std::uint16_t u16(const std::string& what) {
        need(2, what);
        auto v = get_u16(b_, pos_);
        pos_ += 2;
        return v;
    }
    std::uint8_t u8(const std::string& what) {
        need(1, what);
        return b_[pos_++];
    }
    std::span<const std::uint8_t> bytes(std::size_t n, const std::string& what) {
        need(n, what);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    void magic(const char (&m)[5]) {
        if (b_.size() < 4 || std::memcmp(b_.data(), m, 4) != 0)
            throw FormatError(std::string("bad magic, expected \"") + m + "\"", 0);
        pos_ = 4;
    }
    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return b_.size() - pos_; }

   private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading " + path.string());
    return bytes;
}

/// Writes via a sibling temporary file and rename, so readers never observe a
/// partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("error writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace io

}  // namespace t3d
