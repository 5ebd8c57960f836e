#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdiff/io/binary.hpp"
#include "qdiff/optim.hpp"

namespace qdiff {

/**
 * Model checkpoint.
 *
 * Layout (all integers little-endian):
 *
 *   8 bytes   magic "QDIFFCK1"
 *   u64       manifest length M
 *   M bytes   manifest, UTF-8 JSON
 *   u32       tensor count K
 *   K ×       u32 name length, name bytes, u32 rank, rank × u64 extents,
 *             prod(extents) × f64
 *
 * Live parameters are stored as "params/<name>", the EMA shadow as
 * "ema/<name>", both in canonical parameter order.
 */
struct Checkpoint {
    nlohmann::json manifest;
    ParamSet params;
    ParamSet ema;
};

inline constexpr char kCheckpointMagic[8] = {'Q', 'D', 'I', 'F', 'F', 'C', 'K', '1'};

inline io::Bytes encode_checkpoint(const Checkpoint &ck) {
    io::Bytes out(kCheckpointMagic, kCheckpointMagic + 8);
    const std::string manifest = ck.manifest.dump(2);
    io::append_le64(out, manifest.size());
    out.insert(out.end(), manifest.begin(), manifest.end());
    io::append_le32(out, static_cast<std::uint32_t>(ck.params.size() + ck.ema.size()));
    auto put = [&](const std::string &name, const Tensor &t) {
        io::append_le32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        io::append_le32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            io::append_le64(out, d);
        }
        for (double v : t.data()) {
            io::append_le64(out, std::bit_cast<std::uint64_t>(v));
        }
    };
    for (const auto &[name, t] : ck.params) {
        put("params/" + name, t);
    }
    for (const auto &[name, t] : ck.ema) {
        put("ema/" + name, t);
    }
    return out;
}

inline void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path) {
    io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint decode_checkpoint(const io::Bytes &bytes, const std::string &origin) {
    std::size_t pos = 0;
    auto fail = [&](const std::string &field, const std::string &what) {
        throw FormatError(origin + ": " + field + ": " + what + " (offset " +
                          std::to_string(pos) + ")");
    };
    auto need = [&](std::size_t n, const std::string &field) {
        if (bytes.size() - pos < n) {
            fail(field, "truncated");
        }
    };

    need(8, "magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        fail("magic", "not a checkpoint file");
    }
    pos = 8;
    need(8, "manifest length");
    const std::uint64_t mlen = io::load_le64(&bytes[pos]);
    pos += 8;
    need(mlen, "manifest");
    Checkpoint ck;
    try {
        ck.manifest = nlohmann::json::parse(bytes.begin() + static_cast<long>(pos),
                                            bytes.begin() + static_cast<long>(pos + mlen));
    } catch (const nlohmann::json::exception &e) {
        fail("manifest", std::string("invalid JSON: ") + e.what());
    }
    pos += mlen;

    need(4, "tensor count");
    const std::uint32_t count = io::load_le32(&bytes[pos]);
    pos += 4;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string field = "tensor #" + std::to_string(k);
        need(4, field + " name length");
        const std::uint32_t name_len = io::load_le32(&bytes[pos]);
        pos += 4;
        need(name_len, field + " name");
        std::string name(reinterpret_cast<const char *>(&bytes[pos]), name_len);
        pos += name_len;
        need(4, name + " rank");
        const std::uint32_t rank = io::load_le32(&bytes[pos]);
        pos += 4;
        if (rank > 8) {
            fail(name, "implausible rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto &d : shape) {
            need(8, name + " extents");
            d = io::load_le64(&bytes[pos]);
            pos += 8;
        }
        const std::size_t n = numel_of(shape);
        if (n > (bytes.size() - pos) / 8) {
            fail(name, "truncated data");
        }
        std::vector<double> values(n);
        for (auto &v : values) {
            v = std::bit_cast<double>(io::load_le64(&bytes[pos]));
            pos += 8;
        }
        if (name.starts_with("params/")) {
            ck.params.add(name.substr(7), Tensor(std::move(shape), std::move(values), true));
        } else if (name.starts_with("ema/")) {
            ck.ema.add(name.substr(4), Tensor(std::move(shape), std::move(values)));
        } else {
            fail(name, "unknown tensor group");
        }
    }
    if (pos != bytes.size()) {
        fail("trailer", "unexpected trailing bytes");
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

} // namespace qdiff
