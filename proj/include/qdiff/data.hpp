#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/io/binary.hpp"
#include "qdiff/io/npy.hpp"
#include "qdiff/io/png.hpp"
#include "qdiff/io/zip.hpp"
#include "qdiff/tensor.hpp"

namespace qdiff {

inline constexpr std::size_t kImageSize = 28;

/// Value range an ImageBatch currently lives in.
enum class Normalization {
    raw_u8,      ///< integers 0..255
    unit,        ///< [0, 1]
    signed_unit, ///< [-1, 1]
};

inline std::string_view to_string(Normalization n) {
    switch (n) {
    case Normalization::raw_u8:
        return "raw_u8";
    case Normalization::unit:
        return "unit";
    case Normalization::signed_unit:
        return "signed";
    }
    return "?";
}

/// N×C×28×28 images with their labels.
struct ImageBatch {
    Tensor data;
    std::vector<int> labels;
    Normalization normalization = Normalization::raw_u8;

    std::size_t size() const { return data.dim(0); }
    std::size_t channels() const { return data.dim(1); }
    std::size_t height() const { return data.dim(2); }
    std::size_t width() const { return data.dim(3); }
    bool empty() const { return size() == 0; }

    std::size_t image_numel() const { return channels() * height() * width(); }

    std::span<const double> image(std::size_t i) const {
        return data.data().subspan(i * image_numel(), image_numel());
    }
};

/// Gather images by index, in the given order.
inline ImageBatch select(const ImageBatch &batch,
                         std::span<const std::size_t> indices) {
    const std::size_t per = batch.image_numel();
    std::vector<double> values;
    values.reserve(indices.size() * per);
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= batch.size()) {
            throw ContractError("image index " + std::to_string(i) +
                                " out of range for batch of " +
                                std::to_string(batch.size()));
        }
        const auto img = batch.image(i);
        values.insert(values.end(), img.begin(), img.end());
        labels.push_back(batch.labels[i]);
    }
    return {Tensor({indices.size(), batch.channels(), batch.height(),
                    batch.width()},
                   std::move(values)),
            std::move(labels), batch.normalization};
}

/// Images whose label equals `label`, order preserved. May be empty.
inline ImageBatch filter_class(const ImageBatch &batch, int label) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch.labels[i] == label) {
            keep.push_back(i);
        }
    }
    return select(batch, keep);
}

/// First `count` images (or all of them when fewer exist).
inline ImageBatch take_front(const ImageBatch &batch, std::size_t count) {
    std::vector<std::size_t> idx(std::min(count, batch.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    return select(batch, idx);
}

/**
 * Map raw or unit images to `target`.
 *
 * unit: v / 255. signed: v / 127.5 − 1 (from raw) or 2v − 1 (from unit).
 * Every channel uses the same affine map. Normalizing a signed batch again
 * is refused.
 */
inline ImageBatch normalize(const ImageBatch &batch, Normalization target) {
    if (batch.normalization == Normalization::signed_unit) {
        throw ContractError("batch is already normalized to [-1, 1]");
    }
    if (target == Normalization::raw_u8 || target == batch.normalization) {
        throw ContractError("cannot normalize a " +
                            std::string(to_string(batch.normalization)) +
                            " batch to " + std::string(to_string(target)));
    }
    std::vector<double> v(batch.data.data().begin(), batch.data.data().end());
    const bool from_raw = batch.normalization == Normalization::raw_u8;
    for (double &x : v) {
        if (target == Normalization::unit) {
            x = x / 255.0;
        } else {
            x = from_raw ? x / 127.5 - 1.0 : 2.0 * x - 1.0;
        }
    }
    return {Tensor(batch.data.shape(), std::move(v)), batch.labels, target};
}

/**
 * Inverse of normalize: signed → unit, or signed/unit → raw_u8 (rounded to
 * the nearest integer and clamped to 0..255).
 */
inline ImageBatch denormalize(const ImageBatch &batch, Normalization target) {
    const auto from = batch.normalization;
    const bool ok = (from == Normalization::signed_unit &&
                     target != Normalization::signed_unit) ||
                    (from == Normalization::unit && target == Normalization::raw_u8);
    if (!ok) {
        throw ContractError("cannot denormalize a " +
                            std::string(to_string(from)) + " batch to " +
                            std::string(to_string(target)));
    }
    std::vector<double> v(batch.data.data().begin(), batch.data.data().end());
    for (double &x : v) {
        const double unit = from == Normalization::signed_unit ? (x + 1.0) / 2.0 : x;
        if (target == Normalization::unit) {
            x = unit;
        } else {
            x = std::clamp(std::round(unit * 255.0), 0.0, 255.0);
        }
    }
    return {Tensor(batch.data.shape(), std::move(v)), batch.labels, target};
}

/// Unit-range view of any batch, for metrics and image output.
inline ImageBatch to_unit(const ImageBatch &batch) {
    switch (batch.normalization) {
    case Normalization::unit:
        return batch;
    case Normalization::signed_unit:
        return denormalize(batch, Normalization::unit);
    case Normalization::raw_u8:
        return normalize(batch, Normalization::unit);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

[[noreturn]] inline void idx_fail(const std::filesystem::path &path,
                                  std::size_t offset, const std::string &what) {
    throw FormatError(path.string() + ": offset " + std::to_string(offset) +
                      ": " + what);
}

inline std::string hex32(std::uint32_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) {
        s += digits[(v >> shift) & 0xF];
    }
    return s;
}

} // namespace detail

/**
 * Read an MNIST-style IDX image/label pair into a raw_u8 batch.
 *
 * Images: magic 0x00000803, u32 count, rows, cols (big-endian), then
 * count·rows·cols bytes. Labels: magic 0x00000801, u32 count, count bytes.
 * Rows and cols must both be 28.
 */
inline ImageBatch load_idx(const std::filesystem::path &images_path,
                           const std::filesystem::path &labels_path) {
    const io::Bytes img = io::read_file(images_path);
    const io::Bytes lab = io::read_file(labels_path);

    if (img.size() < 16) {
        detail::idx_fail(images_path, img.size(),
                         "truncated header (" + std::to_string(img.size()) +
                             " of 16 bytes)");
    }
    if (const auto magic = io::load_be32(img.data()); magic != 0x00000803) {
        detail::idx_fail(images_path, 0,
                         "bad image magic " + detail::hex32(magic) +
                             " (expected 0x00000803)");
    }
    const std::size_t n = io::load_be32(img.data() + 4);
    const std::size_t rows = io::load_be32(img.data() + 8);
    const std::size_t cols = io::load_be32(img.data() + 12);
    if (rows != kImageSize) {
        detail::idx_fail(images_path, 8,
                         "image height " + std::to_string(rows) + " != 28");
    }
    if (cols != kImageSize) {
        detail::idx_fail(images_path, 12,
                         "image width " + std::to_string(cols) + " != 28");
    }
    const std::size_t expected = 16 + n * rows * cols;
    if (img.size() != expected) {
        detail::idx_fail(images_path, std::min(img.size(), expected),
                         (img.size() < expected ? "truncated payload: expected "
                                                : "trailing bytes: expected ") +
                             std::to_string(expected) + " bytes, found " +
                             std::to_string(img.size()));
    }

    if (lab.size() < 8) {
        detail::idx_fail(labels_path, lab.size(),
                         "truncated header (" + std::to_string(lab.size()) +
                             " of 8 bytes)");
    }
    if (const auto magic = io::load_be32(lab.data()); magic != 0x00000801) {
        detail::idx_fail(labels_path, 0,
                         "bad label magic " + detail::hex32(magic) +
                             " (expected 0x00000801)");
    }
    const std::size_t n_labels = io::load_be32(lab.data() + 4);
    if (lab.size() != 8 + n_labels) {
        detail::idx_fail(labels_path, std::min(lab.size(), 8 + n_labels),
                         "label payload has " + std::to_string(lab.size() - 8) +
                             " bytes, header says " + std::to_string(n_labels));
    }
    if (n_labels != n) {
        detail::idx_fail(labels_path, 4,
                         "label count " + std::to_string(n_labels) +
                             " != image count " + std::to_string(n));
    }

    std::vector<double> values(img.begin() + 16, img.end());
    std::vector<int> labels(lab.begin() + 8, lab.end());
    return {Tensor({n, 1, rows, cols}, std::move(values)), std::move(labels),
            Normalization::raw_u8};
}

// ---------------------------------------------------------------------------
// NPZ (MedMNIST layout)

enum class Split { train, test };

inline std::string_view to_string(Split s) {
    return s == Split::train ? "train" : "test";
}

/**
 * Read `{split}_images.npy` and `{split}_labels.npy` from an NPZ archive.
 *
 * Images must be uint8 in C order, shaped (N,28,28) or (N,28,28,3); RGB
 * pixels are reordered from HWC to CHW. Labels are uint8 (N,) or (N,1).
 */
inline ImageBatch load_npz(const std::filesystem::path &path, Split split) {
    const io::ZipArchive zip = io::ZipArchive::open(path);
    const std::string prefix(to_string(split));
    const std::string img_name = prefix + "_images.npy";
    const std::string lab_name = prefix + "_labels.npy";
    auto fail = [&](const std::string &entry, const std::string &what) {
        throw FormatError(path.string() + ": entry '" + entry + "': " + what);
    };
    auto require_u8 = [&](const io::NpyArray &a, const std::string &entry) {
        if (a.descr != "|u1" && a.descr != "u1" && a.descr != "<u1" &&
            a.descr != ">u1") {
            fail(entry, "unsupported dtype '" + a.descr + "' (only |u1)");
        }
        if (a.fortran_order) {
            fail(entry, "Fortran-ordered arrays are not supported");
        }
        if (a.payload_size != a.count()) {
            fail(entry, "payload has " + std::to_string(a.payload_size) +
                            " bytes, shape needs " + std::to_string(a.count()));
        }
    };

    const io::Bytes img_bytes = zip.read(img_name);
    const io::NpyArray img = io::parse_npy(img_bytes, path.string() + ":" + img_name);
    require_u8(img, img_name);
    const bool gray = img.shape.size() == 3;
    const bool rgb = img.shape.size() == 4 && img.shape[3] == 3;
    if ((!gray && !rgb) || img.shape[1] != kImageSize ||
        img.shape[2] != kImageSize) {
        std::string shape = "(";
        for (auto d : img.shape) {
            shape += std::to_string(d) + ",";
        }
        fail(img_name, "unsupported image shape " + shape + ")");
    }
    const std::size_t n = img.shape[0];
    const std::size_t c = gray ? 1 : 3;
    const std::size_t plane = kImageSize * kImageSize;

    const io::Bytes lab_bytes = zip.read(lab_name);
    const io::NpyArray lab = io::parse_npy(lab_bytes, path.string() + ":" + lab_name);
    require_u8(lab, lab_name);
    if (lab.count() != n || lab.shape.empty() || lab.shape[0] != n ||
        lab.shape.size() > 2) {
        fail(lab_name, "expected " + std::to_string(n) + " labels");
    }

    std::vector<double> values(n * c * plane);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                values[(s * c + ch) * plane + p] =
                    img.payload[(s * plane + p) * c + ch];
            }
        }
    }
    std::vector<int> labels(lab.payload, lab.payload + n);
    return {Tensor({n, c, kImageSize, kImageSize}, std::move(values)),
            std::move(labels), Normalization::raw_u8};
}

// ---------------------------------------------------------------------------
// Raw float dumps of generated samples

/// Write a batch as an NPY '<f8' array of shape (N, C, H, W), signed range.
inline void write_sample_dump(const ImageBatch &batch,
                              const std::filesystem::path &path) {
    if (batch.normalization != Normalization::signed_unit) {
        throw ContractError("sample dumps hold [-1, 1] images");
    }
    io::write_file(path, io::encode_npy_f8(batch.data.shape(), batch.data.data()));
}

inline ImageBatch read_sample_dump(const std::filesystem::path &path) {
    const io::Bytes bytes = io::read_file(path);
    const io::NpyArray a = io::parse_npy(bytes, path.string());
    if (a.descr != "<f8" || a.fortran_order || a.shape.size() != 4) {
        throw FormatError(path.string() +
                          ": sample dump must be a C-order '<f8' N×C×H×W array");
    }
    if (a.payload_size != a.count() * 8) {
        throw FormatError(path.string() + ": sample dump payload has " +
                          std::to_string(a.payload_size) + " bytes, expected " +
                          std::to_string(a.count() * 8));
    }
    std::vector<double> values(a.count());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<double>(io::load_le64(a.payload + 8 * i));
        if (!std::isfinite(values[i]) || values[i] < -1.0 || values[i] > 1.0) {
            throw FormatError(path.string() + ": value " + std::to_string(i) +
                              " outside [-1, 1]");
        }
    }
    return {Tensor(Shape(a.shape.begin(), a.shape.end()), std::move(values)),
            std::vector<int>(a.shape[0], -1), Normalization::signed_unit};
}

// ---------------------------------------------------------------------------
// PNG grids

inline constexpr std::size_t kGridGutter = 2;

/**
 * Tile a batch row-major into one PNG with black gutters between cells.
 * Signed batches are mapped to unit range first.
 */
inline void write_png_grid(const ImageBatch &batch, std::size_t cols,
                           const std::filesystem::path &path) {
    if (batch.empty() || cols == 0) {
        throw ContractError("PNG grid needs at least one image and column");
    }
    if (batch.normalization == Normalization::raw_u8) {
        throw ContractError("PNG grid expects a unit or signed batch");
    }
    const ImageBatch unit = to_unit(batch);
    const std::size_t n = unit.size(), c = unit.channels();
    const std::size_t h = unit.height(), w = unit.width();
    cols = std::min(cols, n);
    const std::size_t rows = (n + cols - 1) / cols;
    const std::size_t width = cols * w + (cols - 1) * kGridGutter;
    const std::size_t height = rows * h + (rows - 1) * kGridGutter;

    std::vector<std::uint8_t> canvas(width * height * c, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t x0 = (i % cols) * (w + kGridGutter);
        const std::size_t y0 = (i / cols) * (h + kGridGutter);
        const auto img = unit.image(i);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double v = img[(ch * h + y) * w + x];
                    canvas[((y0 + y) * width + x0 + x) * c + ch] =
                        static_cast<std::uint8_t>(
                            std::clamp(std::round(v * 255.0), 0.0, 255.0));
                }
            }
        }
    }
    io::write_file(path, io::encode_png(static_cast<std::uint32_t>(width),
                                        static_cast<std::uint32_t>(height),
                                        static_cast<int>(c), canvas));
}

} // namespace qdiff
