#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "qdiff/error.hpp"

namespace qdiff::io {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    Bytes out((std::istreambuf_iterator<char>(in)),
              std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("error while reading '" + path.string() + "'");
    }
    return out;
}

inline void write_file(const std::filesystem::path &path,
                       std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("error while writing '" + path.string() + "'");
    }
}

inline void write_text(const std::filesystem::path &path,
                       const std::string &text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()),
                               text.size()));
}

inline std::uint32_t load_be32(const std::uint8_t *p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
           (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline std::uint16_t load_le16(const std::uint8_t *p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t load_le32(const std::uint8_t *p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
           (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline std::uint64_t load_le64(const std::uint8_t *p) {
    return std::uint64_t{load_le32(p)} | (std::uint64_t{load_le32(p + 4)} << 32);
}

inline void append_be32(Bytes &out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) {
        out.push_back(static_cast<std::uint8_t>(v >> s));
    }
}

inline void append_le32(Bytes &out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) {
        out.push_back(static_cast<std::uint8_t>(v >> s));
    }
}

inline void append_le64(Bytes &out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) {
        out.push_back(static_cast<std::uint8_t>(v >> s));
    }
}

} // namespace qdiff::io
