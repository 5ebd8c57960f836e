#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "qdiff/io/binary.hpp"

namespace qdiff::io {

/// Parsed NPY array: header fields plus a view of the raw payload.
struct NpyArray {
    std::string descr;
    bool fortran_order = false;
    std::vector<std::size_t> shape;
    const std::uint8_t *payload = nullptr;
    std::size_t payload_size = 0;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : shape) {
            n *= d;
        }
        return n;
    }
};

namespace detail {

inline std::size_t skip_space(const std::string &s, std::size_t i) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
        ++i;
    }
    return i;
}

/// Position right after `'key':` in a Python dict literal, or npos.
inline std::size_t find_key(const std::string &header, const std::string &key) {
    for (const char quote : {'\'', '"'}) {
        const std::string needle = std::string(1, quote) + key + quote;
        auto at = header.find(needle);
        if (at == std::string::npos) {
            continue;
        }
        auto i = skip_space(header, at + needle.size());
        if (i < header.size() && header[i] == ':') {
            return skip_space(header, i + 1);
        }
    }
    return std::string::npos;
}

[[noreturn]] inline void npy_fail(const std::string &origin,
                                 const std::string &what) {
    throw FormatError(origin + ": " + what);
}

} // namespace detail

/**
 * Parse an NPY v1.0 buffer. `origin` names the file or archive entry in
 * error messages. The returned payload points into `bytes`.
 */
inline NpyArray parse_npy(const Bytes &bytes, const std::string &origin) {
    auto fail = [&](const std::string &what) {
        detail::npy_fail(origin, what);
    };
    static constexpr char magic[] = "\x93NUMPY";
    if (bytes.size() < 10 || std::memcmp(bytes.data(), magic, 6) != 0) {
        fail("missing NPY magic");
    }
    if (bytes[6] != 1 || bytes[7] != 0) {
        fail("unsupported NPY version " + std::to_string(bytes[6]) + "." +
             std::to_string(bytes[7]));
    }
    const std::size_t header_len = load_le16(&bytes[8]);
    if (10 + header_len > bytes.size()) {
        fail("truncated NPY header");
    }
    const std::string header(reinterpret_cast<const char *>(&bytes[10]),
                             header_len);

    NpyArray arr;
    auto at = detail::find_key(header, "descr");
    if (at == std::string::npos || (header[at] != '\'' && header[at] != '"')) {
        fail("NPY header lacks 'descr'");
    }
    const char quote = header[at];
    const auto end = header.find(quote, at + 1);
    if (end == std::string::npos) {
        fail("unterminated 'descr' in NPY header");
    }
    arr.descr = header.substr(at + 1, end - at - 1);

    at = detail::find_key(header, "fortran_order");
    if (at == std::string::npos) {
        fail("NPY header lacks 'fortran_order'");
    }
    if (header.compare(at, 4, "True") == 0) {
        arr.fortran_order = true;
    } else if (header.compare(at, 5, "False") != 0) {
        fail("unreadable 'fortran_order' in NPY header");
    }

    at = detail::find_key(header, "shape");
    if (at == std::string::npos || header[at] != '(') {
        fail("NPY header lacks 'shape'");
    }
    const auto close = header.find(')', at);
    if (close == std::string::npos) {
        fail("unterminated 'shape' in NPY header");
    }
    for (std::size_t i = at + 1; i < close;) {
        i = detail::skip_space(header, i);
        if (i >= close) {
            break;
        }
        if (!std::isdigit(static_cast<unsigned char>(header[i]))) {
            fail("bad 'shape' entry in NPY header");
        }
        std::size_t v = 0;
        while (i < close && std::isdigit(static_cast<unsigned char>(header[i]))) {
            v = v * 10 + static_cast<std::size_t>(header[i] - '0');
            ++i;
        }
        arr.shape.push_back(v);
        i = detail::skip_space(header, i);
        if (i < close && header[i] == ',') {
            ++i;
        }
    }

    arr.payload = bytes.data() + 10 + header_len;
    arr.payload_size = bytes.size() - 10 - header_len;
    return arr;
}

/// Serialize a little-endian float64 C-order array as NPY v1.0.
inline Bytes encode_npy_f8(const std::vector<std::size_t> &shape,
                           std::span<const double> values) {
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        header += std::to_string(shape[i]) + ",";
        if (i + 1 < shape.size()) {
            header += ' ';
        }
    }
    if (shape.size() > 1) {
        header.pop_back();
    }
    header += "), }";
    // Pad with spaces so that the payload starts on a 64-byte boundary.
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header += '\n';

    Bytes out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
    out.insert(out.end(), header.begin(), header.end());
    for (double v : values) {
        append_le64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

} // namespace qdiff::io
