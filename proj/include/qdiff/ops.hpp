#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qdiff/tensor.hpp"

namespace qdiff {

namespace detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline void require_rank(const Tensor &t, std::size_t rank, const char *what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " +
                             std::to_string(rank) + ", got shape " +
                             to_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor &a, const Tensor &b,
                               const char *what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " +
                             to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

/// Geometry of one 2-D correlation window sweep.
struct ConvGeometry {
    std::size_t channels, height, width; // image being unfolded
    std::size_t kh, kw, stride, pad;
    std::size_t out_h, out_w; // number of window positions

    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return out_h * out_w; }
};

/// Unfold one C×H×W image into a (C·kh·kw)×(out_h·out_w) column matrix.
inline void im2col(const double *img, const ConvGeometry &g, double *cols) {
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double *row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) -
                                    static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) -
                                        static_cast<long>(g.pad);
                        const bool inside =
                            iy >= 0 && ix >= 0 &&
                            iy < static_cast<long>(g.height) &&
                            ix < static_cast<long>(g.width);
                        row[oy * g.out_w + ox] =
                            inside ? img[(c * g.height + iy) * g.width + ix]
                                   : 0.0;
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add columns back onto the image.
inline void col2im(const double *cols, const ConvGeometry &g, double *img) {
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double *row =
                    cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) -
                                    static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        continue;
                    }
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) -
                                        static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.width)) {
                            continue;
                        }
                        img[(c * g.height + iy) * g.width + ix] +=
                            row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace detail

/// out[n,o] = sum_i x[n,i] W[i,o] + b[o]
inline Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
    using namespace detail;
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    require_rank(b, 1, "linear bias");
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (w.dim(0) != in || b.dim(0) != out) {
        throw DimensionError("linear: input " + to_string(x.shape()) +
                             " incompatible with weight " +
                             to_string(w.shape()) + " and bias " +
                             to_string(b.shape()));
    }
    std::vector<double> y(n * out);
    MatMap ym(y.data(), n, out);
    ym.noalias() = ConstMatMap(x.data().data(), n, in) *
                   ConstMatMap(w.data().data(), in, out);
    ym.rowwise() += ConstVecMap(b.data().data(), out).transpose();

    return Tensor::make_result(
        {n, out}, std::move(y), "linear", {x, w, b},
        [n, in, out](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &wn = *self.inputs[1];
            auto &bn = *self.inputs[2];
            ConstMatMap gy(self.grad.data(), n, out);
            if (xn.requires_grad) {
                MatMap(xn.ensure_grad().data(), n, in).noalias() +=
                    gy * ConstMatMap(wn.data.data(), in, out).transpose();
            }
            if (wn.requires_grad) {
                MatMap(wn.ensure_grad().data(), in, out).noalias() +=
                    ConstMatMap(xn.data.data(), n, in).transpose() * gy;
            }
            if (bn.requires_grad) {
                VecMap(bn.ensure_grad().data(), out) +=
                    gy.colwise().sum().transpose();
            }
        });
}

/**
 * 2-D cross-correlation with zero padding.
 *
 * x: N×C×H×W, kernel: F×C×kh×kw, bias: F. Output extent per axis is
 * floor((H + 2·pad − kh) / stride) + 1.
 */
inline Tensor conv2d(const Tensor &x, const Tensor &kernel, const Tensor &bias,
                     std::size_t stride, std::size_t pad) {
    using namespace detail;
    require_rank(x, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    require_rank(bias, 1, "conv2d bias");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = kernel.dim(0), kh = kernel.dim(2),
                      kw = kernel.dim(3);
    if (kernel.dim(1) != c || bias.dim(0) != f) {
        throw DimensionError("conv2d: input " + to_string(x.shape()) +
                             " incompatible with kernel " +
                             to_string(kernel.shape()) + " and bias " +
                             to_string(bias.shape()));
    }
    if (stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw) {
        throw DimensionError("conv2d: non-positive output extent for input " +
                             to_string(x.shape()) + ", kernel " +
                             to_string(kernel.shape()));
    }
    const ConvGeometry g{c,
                         h,
                         w,
                         kh,
                         kw,
                         stride,
                         pad,
                         (h + 2 * pad - kh) / stride + 1,
                         (w + 2 * pad - kw) / stride + 1};
    const std::size_t in_sz = c * h * w, out_sz = f * g.cols();

    std::vector<double> y(n * out_sz);
    std::vector<double> cols(g.rows() * g.cols());
    ConstMatMap km(kernel.data().data(), f, g.rows());
    ConstVecMap bv(bias.data().data(), f);
    for (std::size_t s = 0; s < n; ++s) {
        im2col(x.data().data() + s * in_sz, g, cols.data());
        MatMap ym(y.data() + s * out_sz, f, g.cols());
        ym.noalias() = km * ConstMatMap(cols.data(), g.rows(), g.cols());
        ym.colwise() += bv;
    }

    return Tensor::make_result(
        {n, f, g.out_h, g.out_w}, std::move(y), "conv2d", {x, kernel, bias},
        [g, n, f, in_sz, out_sz](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &kn = *self.inputs[1];
            auto &bn = *self.inputs[2];
            ConstMatMap km(kn.data.data(), f, g.rows());
            std::vector<double> cols(g.rows() * g.cols());
            std::vector<double> dcols(g.rows() * g.cols());
            for (std::size_t s = 0; s < n; ++s) {
                ConstMatMap gy(self.grad.data() + s * out_sz, f, g.cols());
                if (kn.requires_grad) {
                    im2col(xn.data.data() + s * in_sz, g, cols.data());
                    MatMap(kn.ensure_grad().data(), f, g.rows()).noalias() +=
                        gy *
                        ConstMatMap(cols.data(), g.rows(), g.cols())
                            .transpose();
                }
                if (bn.requires_grad) {
                    VecMap(bn.ensure_grad().data(), f) += gy.rowwise().sum();
                }
                if (xn.requires_grad) {
                    MatMap(dcols.data(), g.rows(), g.cols()).noalias() =
                        km.transpose() * gy;
                    col2im(dcols.data(), g, xn.ensure_grad().data() + s * in_sz);
                }
            }
        });
}

/**
 * Transposed convolution, the adjoint of conv2d's linear map.
 *
 * x: N×C×H×W, kernel: C×F×kh×kw, bias: F. Output extent per axis is
 * (H − 1)·stride − 2·pad + kh.
 */
inline Tensor conv_transpose2d(const Tensor &x, const Tensor &kernel,
                               const Tensor &bias, std::size_t stride,
                               std::size_t pad) {
    using namespace detail;
    require_rank(x, 4, "conv_transpose2d input");
    require_rank(kernel, 4, "conv_transpose2d kernel");
    require_rank(bias, 1, "conv_transpose2d bias");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = kernel.dim(1), kh = kernel.dim(2),
                      kw = kernel.dim(3);
    if (kernel.dim(0) != c || bias.dim(0) != f) {
        throw DimensionError("conv_transpose2d: input " +
                             to_string(x.shape()) +
                             " incompatible with kernel " +
                             to_string(kernel.shape()) + " and bias " +
                             to_string(bias.shape()));
    }
    const long oh = (static_cast<long>(h) - 1) * static_cast<long>(stride) -
                    2 * static_cast<long>(pad) + static_cast<long>(kh);
    const long ow = (static_cast<long>(w) - 1) * static_cast<long>(stride) -
                    2 * static_cast<long>(pad) + static_cast<long>(kw);
    if (stride == 0 || h == 0 || w == 0 || oh < 1 || ow < 1) {
        throw DimensionError(
            "conv_transpose2d: non-positive output extent for input " +
            to_string(x.shape()) + ", kernel " + to_string(kernel.shape()));
    }
    // The output image is what a conv2d with this geometry would unfold into
    // an H×W grid of window positions.
    const ConvGeometry g{f,
                         static_cast<std::size_t>(oh),
                         static_cast<std::size_t>(ow),
                         kh,
                         kw,
                         stride,
                         pad,
                         h,
                         w};
    const std::size_t in_sz = c * h * w, out_sz = f * g.height * g.width;

    std::vector<double> y(n * out_sz, 0.0);
    std::vector<double> cols(g.rows() * g.cols());
    ConstMatMap km(kernel.data().data(), c, g.rows());
    for (std::size_t s = 0; s < n; ++s) {
        MatMap(cols.data(), g.rows(), g.cols()).noalias() =
            km.transpose() * ConstMatMap(x.data().data() + s * in_sz, c, h * w);
        double *ys = y.data() + s * out_sz;
        col2im(cols.data(), g, ys);
        const std::size_t plane = g.height * g.width;
        for (std::size_t o = 0; o < f; ++o) {
            const double bo = bias.data()[o];
            for (std::size_t p = 0; p < plane; ++p) {
                ys[o * plane + p] += bo;
            }
        }
    }

    return Tensor::make_result(
        {n, f, g.height, g.width}, std::move(y), "conv_transpose2d",
        {x, kernel, bias}, [g, n, c, f, in_sz, out_sz](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &kn = *self.inputs[1];
            auto &bn = *self.inputs[2];
            ConstMatMap km(kn.data.data(), c, g.rows());
            std::vector<double> dcols(g.rows() * g.cols());
            const std::size_t plane = g.height * g.width;
            for (std::size_t s = 0; s < n; ++s) {
                const double *gy = self.grad.data() + s * out_sz;
                im2col(gy, g, dcols.data());
                ConstMatMap dc(dcols.data(), g.rows(), g.cols());
                if (xn.requires_grad) {
                    MatMap(xn.ensure_grad().data() + s * in_sz, c, g.cols())
                        .noalias() += km * dc;
                }
                if (kn.requires_grad) {
                    MatMap(kn.ensure_grad().data(), c, g.rows()).noalias() +=
                        ConstMatMap(xn.data.data() + s * in_sz, c, g.cols()) *
                        dc.transpose();
                }
                if (bn.requires_grad) {
                    auto &gb = bn.ensure_grad();
                    for (std::size_t o = 0; o < f; ++o) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) {
                            acc += gy[o * plane + p];
                        }
                        gb[o] += acc;
                    }
                }
            }
        });
}

enum class Activation { relu, silu };

inline Tensor activation(const Tensor &x, Activation kind) {
    const auto in = x.data();
    std::vector<double> y(in.size());
    if (kind == Activation::relu) {
        std::transform(in.begin(), in.end(), y.begin(),
                       [](double v) { return v > 0.0 ? v : 0.0; });
    } else {
        std::transform(in.begin(), in.end(), y.begin(),
                       [](double v) { return v * detail::sigmoid(v); });
    }
    return Tensor::make_result(
        x.shape(), std::move(y),
        kind == Activation::relu ? "relu" : "silu", {x},
        [kind](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &gx = xn.ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double v = xn.data[i];
                double d;
                if (kind == Activation::relu) {
                    d = v > 0.0 ? 1.0 : 0.0;
                } else {
                    const double sg = detail::sigmoid(v);
                    d = sg * (1.0 + v * (1.0 - sg));
                }
                gx[i] += self.grad[i] * d;
            }
        });
}

inline Tensor relu(const Tensor &x) { return activation(x, Activation::relu); }
inline Tensor silu(const Tensor &x) { return activation(x, Activation::silu); }

/// N×C×H×W -> N×C, mean over each spatial plane.
inline Tensor global_avg_pool(const Tensor &x) {
    detail::require_rank(x, 4, "global_avg_pool input");
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t plane = x.dim(2) * x.dim(3);
    if (plane == 0) {
        throw DimensionError("global_avg_pool: empty spatial extent " +
                             to_string(x.shape()));
    }
    std::vector<double> y(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            acc += x.data()[i * plane + p];
        }
        y[i] = acc / static_cast<double>(plane);
    }
    return Tensor::make_result(
        {x.dim(0), x.dim(1)}, std::move(y), "global_avg_pool", {x},
        [nc, plane](detail::Node &self) {
            auto &gx = self.inputs[0]->ensure_grad();
            const double inv = 1.0 / static_cast<double>(plane);
            for (std::size_t i = 0; i < nc; ++i) {
                const double g = self.grad[i] * inv;
                for (std::size_t p = 0; p < plane; ++p) {
                    gx[i * plane + p] += g;
                }
            }
        });
}

namespace detail {

inline void require_channelwise(const Tensor &x, const Tensor &s,
                                const char *what) {
    require_rank(x, 4, what);
    if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
        throw DimensionError(std::string(what) + ": feature map " +
                             to_string(x.shape()) +
                             " does not match channel vector " +
                             to_string(s.shape()));
    }
}

} // namespace detail

/// out[n,c,h,w] = x[n,c,h,w] · s[n,c]
inline Tensor broadcast_mul_channelwise(const Tensor &x, const Tensor &s) {
    detail::require_channelwise(x, s, "broadcast_mul_channelwise");
    const std::size_t nc = s.numel(), plane = x.dim(2) * x.dim(3);
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < nc; ++i) {
        const double g = s.data()[i];
        for (std::size_t p = 0; p < plane; ++p) {
            y[i * plane + p] = x.data()[i * plane + p] * g;
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(y), "broadcast_mul_channelwise", {x, s},
        [nc, plane](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &sn = *self.inputs[1];
            if (xn.requires_grad) {
                auto &gx = xn.ensure_grad();
                for (std::size_t i = 0; i < nc; ++i) {
                    for (std::size_t p = 0; p < plane; ++p) {
                        gx[i * plane + p] += self.grad[i * plane + p] * sn.data[i];
                    }
                }
            }
            if (sn.requires_grad) {
                auto &gs = sn.ensure_grad();
                for (std::size_t i = 0; i < nc; ++i) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        acc += self.grad[i * plane + p] * xn.data[i * plane + p];
                    }
                    gs[i] += acc;
                }
            }
        });
}

/// out[n,c,h,w] = x[n,c,h,w] + s[n,c]; used to inject the time embedding.
inline Tensor broadcast_add_channelwise(const Tensor &x, const Tensor &s) {
    detail::require_channelwise(x, s, "broadcast_add_channelwise");
    const std::size_t nc = s.numel(), plane = x.dim(2) * x.dim(3);
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < nc; ++i) {
        for (std::size_t p = 0; p < plane; ++p) {
            y[i * plane + p] = x.data()[i * plane + p] + s.data()[i];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(y), "broadcast_add_channelwise", {x, s},
        [nc, plane](detail::Node &self) {
            auto &xn = *self.inputs[0];
            auto &sn = *self.inputs[1];
            if (xn.requires_grad) {
                auto &gx = xn.ensure_grad();
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += self.grad[i];
                }
            }
            if (sn.requires_grad) {
                auto &gs = sn.ensure_grad();
                for (std::size_t i = 0; i < nc; ++i) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        acc += self.grad[i * plane + p];
                    }
                    gs[i] += acc;
                }
            }
        });
}

inline Tensor add(const Tensor &a, const Tensor &b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = a.data()[i] + b.data()[i];
    }
    return Tensor::make_result(a.shape(), std::move(y), "add", {a, b},
                               [](detail::Node &self) {
                                   for (auto &in : self.inputs) {
                                       if (!in->requires_grad) {
                                           continue;
                                       }
                                       auto &g = in->ensure_grad();
                                       for (std::size_t i = 0; i < g.size(); ++i) {
                                           g[i] += self.grad[i];
                                       }
                                   }
                               });
}

/// Concatenate two N×C×H×W maps along the channel axis.
inline Tensor concat_channels(const Tensor &a, const Tensor &b) {
    detail::require_rank(a, 4, "concat_channels");
    detail::require_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels: " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
    const std::size_t n = a.dim(0);
    const std::size_t sa = a.numel() / n, sb = b.numel() / n;
    std::vector<double> y(a.numel() + b.numel());
    for (std::size_t s = 0; s < n; ++s) {
        std::copy_n(a.data().data() + s * sa, sa, y.data() + s * (sa + sb));
        std::copy_n(b.data().data() + s * sb, sb, y.data() + s * (sa + sb) + sa);
    }
    return Tensor::make_result(
        {n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, std::move(y),
        "concat_channels", {a, b}, [n, sa, sb](detail::Node &self) {
            const std::size_t sizes[2] = {sa, sb};
            const std::size_t offsets[2] = {0, sa};
            for (std::size_t k = 0; k < 2; ++k) {
                auto &in = *self.inputs[k];
                if (!in.requires_grad) {
                    continue;
                }
                auto &g = in.ensure_grad();
                for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t i = 0; i < sizes[k]; ++i) {
                        g[s * sizes[k] + i] +=
                            self.grad[s * (sa + sb) + offsets[k] + i];
                    }
                }
            }
        });
}

inline Tensor sum(const Tensor &x) {
    double acc = 0.0;
    for (double v : x.data()) {
        acc += v;
    }
    return Tensor::make_result({}, {acc}, "sum", {x}, [](detail::Node &self) {
        auto &g = self.inputs[0]->ensure_grad();
        for (double &v : g) {
            v += self.grad[0];
        }
    });
}

/// Mean of squared differences over all elements.
inline Tensor mse_loss(const Tensor &pred, const Tensor &target) {
    detail::require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.numel();
    if (n == 0) {
        throw DimensionError("mse_loss: empty tensors");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    return Tensor::make_result(
        {}, {acc / static_cast<double>(n)}, "mse_loss", {pred, target},
        [n](detail::Node &self) {
            auto &p = *self.inputs[0];
            auto &t = *self.inputs[1];
            const double scale = 2.0 * self.grad[0] / static_cast<double>(n);
            if (p.requires_grad) {
                auto &g = p.ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] += scale * (p.data[i] - t.data[i]);
                }
            }
            if (t.requires_grad) {
                auto &g = t.ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] -= scale * (p.data[i] - t.data[i]);
                }
            }
        });
}

} // namespace qdiff
