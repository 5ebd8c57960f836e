#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "qdiff/data.hpp"
#include "qdiff/ops.hpp"
#include "qdiff/rng.hpp"

namespace qdiff::metrics {

// ---------------------------------------------------------------------------
// SSIM

struct SsimConstants {
    double dynamic_range = 1.0;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;

    static SsimConstants for_range(double L) {
        return {L, (0.01 * L) * (0.01 * L), (0.03 * L) * (0.03 * L)};
    }
};

/**
 * Global-statistics SSIM of two equally shaped C×H×W images, averaged over
 * channels. Means, variances and the covariance are population moments over
 * each channel plane.
 */
inline double ssim(std::span<const double> x, std::span<const double> y,
                   std::size_t channels, SsimConstants k = {}) {
    if (x.size() != y.size() || channels == 0 || x.size() % channels != 0 ||
        x.empty()) {
        throw ContractError("ssim: images of " + std::to_string(x.size()) +
                            " and " + std::to_string(y.size()) +
                            " values are not comparable over " +
                            std::to_string(channels) + " channels");
    }
    const std::size_t plane = x.size() / channels;
    const auto np = static_cast<double>(plane);
    double total = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
        const auto xs = x.subspan(c * plane, plane);
        const auto ys = y.subspan(c * plane, plane);
        const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / np;
        const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / np;
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double dx = xs[i] - mx, dy = ys[i] - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
        vx /= np;
        vy /= np;
        cxy /= np;
        total += ((2.0 * mx * my + k.c1) * (2.0 * cxy + k.c2)) /
                 ((mx * mx + my * my + k.c1) * (vx + vy + k.c2));
    }
    return total / static_cast<double>(channels);
}

/**
 * Mean over generated images of their mean SSIM against K = min(64, |ref|)
 * reference images drawn without replacement with `seed`. Both sets are
 * mapped to [0, 1] first.
 */
inline double set_ssim(const ImageBatch &generated, const ImageBatch &reference,
                       std::uint64_t seed, std::size_t max_refs = 64) {
    if (generated.empty() || reference.empty()) {
        throw ContractError("set_ssim needs non-empty generated and reference sets");
    }
    if (generated.image_numel() != reference.image_numel() ||
        generated.channels() != reference.channels()) {
        throw DimensionError("set_ssim: generated " +
                             qdiff::to_string(generated.data.shape()) +
                             " vs reference " + qdiff::to_string(reference.data.shape()));
    }
    const ImageBatch gen = to_unit(generated);
    const ImageBatch ref = to_unit(reference);

    std::vector<std::size_t> idx(ref.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(std::min(max_refs, idx.size()));

    double total = 0.0;
    for (std::size_t g = 0; g < gen.size(); ++g) {
        double per = 0.0;
        for (std::size_t r : idx) {
            per += ssim(gen.image(g), ref.image(r), gen.channels());
        }
        total += per / static_cast<double>(idx.size());
    }
    return total / static_cast<double>(gen.size());
}

// ---------------------------------------------------------------------------
// Fréchet distance

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Mean and unbiased covariance of the rows of `features`, plus
/// shrinkage·I on the diagonal.
inline GaussianStats fit_gaussian(const Eigen::MatrixXd &features,
                                  double shrinkage = 1e-6) {
    const auto n = features.rows();
    if (n < 2) {
        throw ContractError("fitting a Gaussian needs at least 2 samples, got " +
                            std::to_string(n));
    }
    if (shrinkage <= 0.0 && n < features.cols() + 1) {
        throw ContractError("need at least D + 1 = " +
                            std::to_string(features.cols() + 1) +
                            " samples without covariance shrinkage, got " +
                            std::to_string(n));
    }
    GaussianStats s;
    s.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    s.cov.diagonal().array() += shrinkage;
    return s;
}

/**
 * Square root of a symmetric PSD matrix via eigendecomposition.
 *
 * Eigenvalues in (−1e-8, 0) are treated as round-off and clamped to zero;
 * anything below −1e-6 raises NumericalError. Values in between are clamped
 * as well.
 */
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd &m) {
    if (m.rows() != m.cols()) {
        throw DimensionError("psd_sqrt: matrix is not square");
    }
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("psd_sqrt: eigendecomposition failed");
    }
    Eigen::VectorXd lambda = eig.eigenvalues();
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) < -1e-6) {
            throw NumericalError("psd_sqrt: eigenvalue " + std::to_string(lambda(i)) +
                                 " is too negative for a PSD matrix");
        }
        lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
    }
    return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

/**
 * ||mu_a − mu_b||² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2}).
 *
 * Tr((Σ_a Σ_b)^{1/2}) is evaluated as Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}),
 * whose argument is symmetric PSD. Results within −1e-6 of zero are
 * reported as zero.
 */
inline double frechet_distance(const GaussianStats &a, const GaussianStats &b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() ||
        b.cov.rows() != b.mean.size() || a.cov.cols() != a.cov.rows() ||
        b.cov.cols() != b.cov.rows()) {
        throw NumericalError("frechet_distance: dimension mismatch (" +
                             std::to_string(a.mean.size()) + " vs " +
                             std::to_string(b.mean.size()) + ")");
    }
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = root_a * b.cov * root_a;
    const Eigen::MatrixXd cross = psd_sqrt(inner);
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() +
                     b.cov.trace() - 2.0 * cross.trace();
    if (d < -1e-6) {
        throw NumericalError("frechet_distance: negative result " + std::to_string(d));
    }
    return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Feature extractors standing in for a pretrained Inception network.

enum class ExtractorKind { pixel_pca, fixed_random_conv };

inline std::string_view to_string(ExtractorKind k) {
    return k == ExtractorKind::pixel_pca ? "pixel_pca" : "fixed_random_conv";
}

inline ExtractorKind parse_extractor(std::string_view s) {
    if (s == "pixel_pca") {
        return ExtractorKind::pixel_pca;
    }
    if (s == "fixed_random_conv") {
        return ExtractorKind::fixed_random_conv;
    }
    throw UsageError("unknown feature extractor '" + std::string(s) + "'");
}

namespace detail {

/// Unit-range images as rows of a matrix.
inline Eigen::MatrixXd flatten(const ImageBatch &batch) {
    const ImageBatch unit = to_unit(batch);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(unit.size()),
                      static_cast<Eigen::Index>(unit.image_numel()));
    for (std::size_t i = 0; i < unit.size(); ++i) {
        const auto img = unit.image(i);
        for (std::size_t j = 0; j < img.size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = img[j];
        }
    }
    return m;
}

} // namespace detail

/**
 * Deterministic image embedding.
 *
 * pixel_pca: flatten to [0, 1] pixels and project onto the top principal
 * axes of the reference set (fit()). Uses min(D, rank-limited) axes when the
 * reference set is small.
 *
 * fixed_random_conv: three frozen seed-pinned 3×3 conv layers with ReLU
 * (C→16 s2, 16→32 s2, 32→D s1), global average pooled to D values.
 */
class FeatureExtractor {
  public:
    FeatureExtractor(ExtractorKind kind, std::size_t dim, std::uint64_t seed)
        : kind_(kind), dim_(dim), seed_(seed) {
        if (dim == 0) {
            throw ContractError("feature dimension must be positive");
        }
    }

    ExtractorKind kind() const noexcept { return kind_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t seed() const noexcept { return seed_; }

    /// Fit data-dependent state on the reference set (PCA axes).
    void fit(const ImageBatch &reference) {
        if (reference.size() < 2) {
            throw ContractError("feature extractor needs at least 2 reference images");
        }
        channels_ = reference.channels();
        if (kind_ == ExtractorKind::fixed_random_conv) {
            init_conv_weights();
            return;
        }
        const Eigen::MatrixXd x = detail::flatten(reference);
        mean_ = x.colwise().mean().transpose();
        const Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
        Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
        const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(dim_),
                                              svd.matrixV().cols());
        axes_ = svd.matrixV().leftCols(k);
    }

    Eigen::MatrixXd extract(const ImageBatch &batch) const {
        if (channels_ == 0) {
            throw ContractError("feature extractor used before fit()");
        }
        if (batch.channels() != channels_) {
            throw DimensionError("feature extractor fit on " +
                                 std::to_string(channels_) +
                                 "-channel images, got " +
                                 std::to_string(batch.channels()));
        }
        if (kind_ == ExtractorKind::pixel_pca) {
            const Eigen::MatrixXd x = detail::flatten(batch);
            return (x.rowwise() - mean_.transpose()) * axes_;
        }
        return conv_features(batch);
    }

  private:
    void init_conv_weights() {
        Rng rng(seed_);
        const std::size_t widths[4] = {channels_, 16, 32, dim_};
        conv_.clear();
        for (int l = 0; l < 3; ++l) {
            const std::size_t in = widths[l], out = widths[l + 1];
            const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
            std::vector<double> w(out * in * 9);
            for (double &v : w) {
                v = rng.uniform(-bound, bound);
            }
            conv_.push_back(Tensor({out, in, 3, 3}, std::move(w)));
            conv_.push_back(Tensor::zeros({out}));
        }
    }

    Eigen::MatrixXd conv_features(const ImageBatch &batch) const {
        const ImageBatch unit = to_unit(batch);
        Tensor h = unit.data;
        h = relu(conv2d(h, conv_[0], conv_[1], 2, 1));
        h = relu(conv2d(h, conv_[2], conv_[3], 2, 1));
        h = relu(conv2d(h, conv_[4], conv_[5], 1, 1));
        const Tensor pooled = global_avg_pool(h);
        Eigen::MatrixXd out(static_cast<Eigen::Index>(pooled.dim(0)),
                            static_cast<Eigen::Index>(pooled.dim(1)));
        for (std::size_t i = 0; i < pooled.dim(0); ++i) {
            for (std::size_t j = 0; j < pooled.dim(1); ++j) {
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    pooled.data()[i * pooled.dim(1) + j];
            }
        }
        return out;
    }

    ExtractorKind kind_;
    std::size_t dim_;
    std::uint64_t seed_;
    std::size_t channels_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd axes_;
    std::vector<Tensor> conv_;
};

/**
 * Fréchet distance between Gaussians fitted to extracted features. The
 * extractor is fit on `reference`; covariances get `shrinkage`·I.
 */
inline double fid_like(const ImageBatch &generated, const ImageBatch &reference,
                       FeatureExtractor fx, double shrinkage = 1e-6) {
    if (generated.channels() != reference.channels() ||
        generated.image_numel() != reference.image_numel()) {
        throw DimensionError("fid_like: generated " +
                             qdiff::to_string(generated.data.shape()) +
                             " vs reference " + qdiff::to_string(reference.data.shape()));
    }
    fx.fit(reference);
    const GaussianStats g = fit_gaussian(fx.extract(generated), shrinkage);
    const GaussianStats r = fit_gaussian(fx.extract(reference), shrinkage);
    return frechet_distance(r, g);
}

} // namespace qdiff::metrics
