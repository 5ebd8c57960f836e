#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "qdiff/io/binary.hpp"

namespace qdiff::io {

/**
 * Read-only view of a ZIP archive held in memory.
 *
 * Supports stored and deflated entries located through the central
 * directory, including the zip64 extra field numpy writes. Multi-disk
 * archives, encryption and other compression methods are rejected.
 */
class ZipArchive {
  public:
    struct Entry {
        std::string name;
        std::uint16_t method = 0;
        std::uint32_t crc = 0;
        std::uint64_t compressed_size = 0;
        std::uint64_t size = 0;
        std::uint64_t header_offset = 0;
    };

    ZipArchive(Bytes bytes, std::string origin)
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {
        parse_directory();
    }

    static ZipArchive open(const std::filesystem::path &path) {
        return ZipArchive(read_file(path), path.string());
    }

    const std::vector<Entry> &entries() const noexcept { return entries_; }

    const Entry *find(const std::string &name) const {
        auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const Entry &e) { return e.name == name; });
        return it == entries_.end() ? nullptr : &*it;
    }

    /// Decompressed, CRC-checked payload of an entry.
    Bytes read(const std::string &name) const {
        const Entry *e = find(name);
        if (e == nullptr) {
            fail("missing entry '" + name + "'");
        }
        const std::uint64_t lh = e->header_offset;
        require(lh + 30 <= bytes_.size(), lh, "truncated local header of '" + name + "'");
        if (load_le32(&bytes_[lh]) != 0x04034b50) {
            fail("bad local header signature for '" + name + "' at offset " +
                 std::to_string(lh));
        }
        const std::uint64_t data_start =
            lh + 30 + load_le16(&bytes_[lh + 26]) + load_le16(&bytes_[lh + 28]);
        require(data_start + e->compressed_size <= bytes_.size(), data_start,
                "truncated data of '" + name + "'");
        const std::uint8_t *src = bytes_.data() + data_start;

        Bytes out;
        if (e->method == 0) {
            if (e->compressed_size != e->size) {
                fail("stored entry '" + name + "' has inconsistent sizes");
            }
            out.assign(src, src + e->size);
        } else if (e->method == 8) {
            out = inflate_raw(src, e->compressed_size, e->size, name);
        } else {
            fail("entry '" + name + "' uses unsupported compression method " +
                 std::to_string(e->method));
        }
        const auto crc = static_cast<std::uint32_t>(
            crc32(0L, out.data(), static_cast<uInt>(out.size())));
        if (crc != e->crc) {
            fail("CRC mismatch in entry '" + name + "'");
        }
        return out;
    }

  private:
    [[noreturn]] void fail(const std::string &what) const {
        throw FormatError(origin_ + ": " + what);
    }

    void require(bool ok, std::uint64_t offset, const std::string &what) const {
        if (!ok) {
            fail(what + " (offset " + std::to_string(offset) + ")");
        }
    }

    void parse_directory() {
        const std::size_t n = bytes_.size();
        if (n < 22) {
            fail("too small to be a ZIP archive (" + std::to_string(n) + " bytes)");
        }
        // End-of-central-directory record, possibly followed by a comment.
        std::size_t eocd = n - 22;
        const std::size_t lowest = n > 22 + 0xFFFF ? n - 22 - 0xFFFF : 0;
        while (load_le32(&bytes_[eocd]) != 0x06054b50) {
            if (eocd == lowest) {
                fail("end-of-central-directory record not found");
            }
            --eocd;
        }
        if (load_le16(&bytes_[eocd + 4]) != 0 || load_le16(&bytes_[eocd + 6]) != 0) {
            fail("multi-disk archives are not supported");
        }
        const std::uint16_t count = load_le16(&bytes_[eocd + 10]);
        std::uint64_t pos = load_le32(&bytes_[eocd + 16]);
        if (count == 0xFFFF || pos == 0xFFFFFFFFu) {
            fail("zip64 central directory is not supported");
        }

        for (std::uint16_t i = 0; i < count; ++i) {
            require(pos + 46 <= eocd, pos, "truncated central directory");
            const std::uint8_t *h = &bytes_[pos];
            if (load_le32(h) != 0x02014b50) {
                fail("bad central directory signature at offset " +
                     std::to_string(pos));
            }
            Entry e;
            const std::uint16_t flags = load_le16(h + 8);
            e.method = load_le16(h + 10);
            e.crc = load_le32(h + 16);
            e.compressed_size = load_le32(h + 20);
            e.size = load_le32(h + 24);
            const std::uint16_t name_len = load_le16(h + 28);
            const std::uint16_t extra_len = load_le16(h + 30);
            const std::uint16_t comment_len = load_le16(h + 32);
            e.header_offset = load_le32(h + 42);
            require(pos + 46 + name_len + extra_len + comment_len <= eocd, pos,
                    "truncated central directory entry");
            e.name.assign(reinterpret_cast<const char *>(h + 46), name_len);
            if (flags & 0x1U) {
                fail("encrypted entry '" + e.name + "'");
            }
            read_zip64_extra(e, h + 46 + name_len, extra_len);
            entries_.push_back(std::move(e));
            pos += 46 + name_len + extra_len + comment_len;
        }
    }

    void read_zip64_extra(Entry &e, const std::uint8_t *extra,
                          std::uint16_t len) const {
        std::uint16_t off = 0;
        while (off + 4 <= len) {
            const std::uint16_t id = load_le16(extra + off);
            const std::uint16_t sz = load_le16(extra + off + 2);
            if (off + 4 + sz > len) {
                fail("malformed extra field in entry '" + e.name + "'");
            }
            if (id == 0x0001) {
                const std::uint8_t *p = extra + off + 4;
                const std::uint8_t *end = p + sz;
                auto take = [&](std::uint64_t &field) {
                    if (p + 8 > end) {
                        fail("short zip64 field in entry '" + e.name + "'");
                    }
                    field = load_le64(p);
                    p += 8;
                };
                if (e.size == 0xFFFFFFFFu) take(e.size);
                if (e.compressed_size == 0xFFFFFFFFu) take(e.compressed_size);
                if (e.header_offset == 0xFFFFFFFFu) take(e.header_offset);
            }
            off = static_cast<std::uint16_t>(off + 4 + sz);
        }
    }

    Bytes inflate_raw(const std::uint8_t *src, std::uint64_t src_len,
                      std::uint64_t expected, const std::string &name) const {
        Bytes out(expected);
        z_stream zs{};
        if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) {
            fail("zlib initialization failed");
        }
        zs.next_in = const_cast<Bytef *>(src);
        zs.avail_in = static_cast<uInt>(src_len);
        zs.next_out = out.data();
        zs.avail_out = static_cast<uInt>(out.size());
        const int rc = inflate(&zs, Z_FINISH);
        const auto produced = zs.total_out;
        inflateEnd(&zs);
        if (rc != Z_STREAM_END || produced != expected) {
            fail("corrupt deflate stream in entry '" + name + "'");
        }
        return out;
    }

    Bytes bytes_;
    std::string origin_;
    std::vector<Entry> entries_;
};

} // namespace qdiff::io
