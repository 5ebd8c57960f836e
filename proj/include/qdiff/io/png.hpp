#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <zlib.h>

#include "qdiff/io/binary.hpp"

namespace qdiff::io {

namespace detail {

inline void append_chunk(Bytes &out, const char type[4],
                         std::span<const std::uint8_t> body) {
    append_be32(out, static_cast<std::uint32_t>(body.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const auto crc = crc32(0L, out.data() + crc_start,
                           static_cast<uInt>(out.size() - crc_start));
    append_be32(out, static_cast<std::uint32_t>(crc));
}

} // namespace detail

/**
 * Encode 8-bit pixels as a non-interlaced PNG.
 *
 * pixels is row-major with `channels` interleaved samples per pixel;
 * channels 1 gives color type 0 (grayscale), 3 gives color type 2 (RGB).
 */
inline Bytes encode_png(std::uint32_t width, std::uint32_t height, int channels,
                        std::span<const std::uint8_t> pixels) {
    if (channels != 1 && channels != 3) {
        throw ContractError("PNG encoder supports 1 or 3 channels, got " +
                            std::to_string(channels));
    }
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    if (pixels.size() != stride * height || width == 0 || height == 0) {
        throw ContractError("PNG encoder: pixel buffer does not match " +
                            std::to_string(width) + "x" +
                            std::to_string(height));
    }

    // Every scanline uses filter type 0.
    Bytes raw;
    raw.reserve((stride + 1) * height);
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels.begin() + static_cast<long>(y * stride),
                   pixels.begin() + static_cast<long>((y + 1) * stride));
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    Bytes packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(),
                  static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
        throw IoError("zlib compression failed while encoding PNG");
    }
    packed.resize(packed_len);

    Bytes out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    Bytes ihdr;
    append_be32(ihdr, width);
    append_be32(ihdr, height);
    ihdr.push_back(8);
    ihdr.push_back(channels == 1 ? 0 : 2);
    ihdr.push_back(0); // deflate
    ihdr.push_back(0); // adaptive filtering
    ihdr.push_back(0); // no interlace
    detail::append_chunk(out, "IHDR", ihdr);
    detail::append_chunk(out, "IDAT", packed);
    detail::append_chunk(out, "IEND", {});
    return out;
}

} // namespace qdiff::io
