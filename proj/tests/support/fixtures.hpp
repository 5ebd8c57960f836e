#pragma once

// Byte-level fixture builders and an independent PNG decoder (libpng).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>
#include <zlib.h>

#include "qdiff/io/binary.hpp"

namespace fixture {

using qdiff::io::Bytes;

inline std::filesystem::path temp_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("qdiff_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Bytes idx_images(const std::vector<std::vector<std::uint8_t>> &images,
                        std::uint32_t rows = 28, std::uint32_t cols = 28,
                        std::uint32_t magic = 0x00000803) {
    Bytes out;
    qdiff::io::append_be32(out, magic);
    qdiff::io::append_be32(out, static_cast<std::uint32_t>(images.size()));
    qdiff::io::append_be32(out, rows);
    qdiff::io::append_be32(out, cols);
    for (const auto &img : images) out.insert(out.end(), img.begin(), img.end());
    return out;
}

inline Bytes idx_labels(const std::vector<std::uint8_t> &labels,
                        std::uint32_t magic = 0x00000801) {
    Bytes out;
    qdiff::io::append_be32(out, magic);
    qdiff::io::append_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

/// NPY v1.0 with an arbitrary header dict (payload appended verbatim).
inline Bytes npy(const std::string &dict, const Bytes &payload,
                 std::uint8_t major = 1, std::uint8_t minor = 0) {
    std::string header = dict;
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header += '\n';
    Bytes out = {0x93, 'N', 'U', 'M', 'P', 'Y', major, minor};
    out.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

inline std::string u8_dict(const std::string &shape) {
    return "{'descr': '|u1', 'fortran_order': False, 'shape': " + shape + ", }";
}

struct ZipItem {
    std::string name;
    Bytes data;
    bool deflate = false;
};

/// Minimal ZIP writer (stored or raw-deflate entries, no extras).
inline Bytes zip(const std::vector<ZipItem> &items) {
    using qdiff::io::append_le32;
    auto le16 = [](Bytes &o, std::uint16_t v) {
        o.push_back(static_cast<std::uint8_t>(v));
        o.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    Bytes out, central;
    for (const auto &item : items) {
        Bytes body = item.data;
        if (item.deflate) {
            z_stream zs{};
            deflateInit2(&zs, 6, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
            Bytes packed(deflateBound(&zs, item.data.size()) + 16);
            zs.next_in = const_cast<Bytef *>(item.data.data());
            zs.avail_in = static_cast<uInt>(item.data.size());
            zs.next_out = packed.data();
            zs.avail_out = static_cast<uInt>(packed.size());
            deflate(&zs, Z_FINISH);
            packed.resize(zs.total_out);
            deflateEnd(&zs);
            body = packed;
        }
        const auto crc = static_cast<std::uint32_t>(
            crc32(0L, item.data.data(), static_cast<uInt>(item.data.size())));
        const auto offset = static_cast<std::uint32_t>(out.size());
        const std::uint16_t method = item.deflate ? 8 : 0;

        append_le32(out, 0x04034b50);
        le16(out, 20); le16(out, 0); le16(out, method); le16(out, 0); le16(out, 0);
        append_le32(out, crc);
        append_le32(out, static_cast<std::uint32_t>(body.size()));
        append_le32(out, static_cast<std::uint32_t>(item.data.size()));
        le16(out, static_cast<std::uint16_t>(item.name.size())); le16(out, 0);
        out.insert(out.end(), item.name.begin(), item.name.end());
        out.insert(out.end(), body.begin(), body.end());

        append_le32(central, 0x02014b50);
        le16(central, 20); le16(central, 20); le16(central, 0); le16(central, method);
        le16(central, 0); le16(central, 0);
        append_le32(central, crc);
        append_le32(central, static_cast<std::uint32_t>(body.size()));
        append_le32(central, static_cast<std::uint32_t>(item.data.size()));
        le16(central, static_cast<std::uint16_t>(item.name.size()));
        le16(central, 0); le16(central, 0); le16(central, 0); le16(central, 0);
        append_le32(central, 0);
        append_le32(central, offset);
        central.insert(central.end(), item.name.begin(), item.name.end());
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    out.insert(out.end(), central.begin(), central.end());
    append_le32(out, 0x06054b50);
    le16(out, 0); le16(out, 0);
    le16(out, static_cast<std::uint16_t>(items.size()));
    le16(out, static_cast<std::uint16_t>(items.size()));
    append_le32(out, static_cast<std::uint32_t>(central.size()));
    append_le32(out, cd_offset);
    le16(out, 0);
    return out;
}

struct DecodedPng {
    std::uint32_t width = 0, height = 0;
    int channels = 0;
    int bit_depth = 0;
    int interlace = 0;
    std::vector<std::uint8_t> pixels; // row-major, interleaved
};

/// Decode with libpng, independent of the library's encoder.
inline DecodedPng decode_png(const std::filesystem::path &path) {
    FILE *fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    DecodedPng out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng failed to decode " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    out.interlace = png_get_interlace_type(png, info);
    const int color = png_get_color_type(png, info);
    out.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : color == PNG_COLOR_TYPE_RGB ? 3 : -1;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.pixels.resize(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (std::uint32_t y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

} // namespace fixture
