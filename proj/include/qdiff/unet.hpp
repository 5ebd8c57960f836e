#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/ops.hpp"
#include "qdiff/optim.hpp"
#include "qdiff/quantum_layer.hpp"
#include "qdiff/rng.hpp"

namespace qdiff {

enum class BottleneckKind { classical, quantum };

inline std::string_view to_string(BottleneckKind k) {
    return k == BottleneckKind::classical ? "classical" : "quantum";
}

inline BottleneckKind parse_bottleneck(std::string_view s) {
    if (s == "classical") {
        return BottleneckKind::classical;
    }
    if (s == "quantum") {
        return BottleneckKind::quantum;
    }
    throw UsageError("unknown model variant '" + std::string(s) +
                     "' (expected classical or quantum)");
}

/**
 * Channel plan of the denoiser.
 *
 *   encoder  in→32 (28×28), 32→64 stride 2 (14×14), 64→128 stride 2 (7×7)
 *   bottleneck  time embedding added, residual block, optional quantum gate
 *   decoder  128→64 and 64→32 transposed convs (k4 s2 p1), 3×3 conv 32→in
 *
 * With skip_connections the decoder also concatenates the matching encoder
 * maps (14×14 and 28×28) before its second and final convolutions.
 */
struct UNetConfig {
    std::size_t in_channels = 1;
    BottleneckKind bottleneck = BottleneckKind::classical;
    quantum::CircuitConfig circuit{};
    bool skip_connections = false;
    std::size_t time_embed_dim = 128;

    static constexpr std::size_t kBottleneckChannels = 128;

    void validate() const {
        if (in_channels != 1 && in_channels != 3) {
            throw ContractError("U-Net supports 1 or 3 input channels, got " +
                                std::to_string(in_channels));
        }
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
            throw ContractError("time embedding dimension must be even and >= 2");
        }
        if (bottleneck == BottleneckKind::quantum) {
            circuit.validate();
        }
    }
};

/// Sinusoidal features: out[2k] = sin(t·w_k), out[2k+1] = cos(t·w_k),
/// w_k = 10000^(−2k/d) for k = 0..d/2−1.
inline std::vector<double> timestep_embedding(double t, std::size_t d) {
    if (d < 2 || d % 2 != 0) {
        throw ContractError("timestep embedding dimension must be even and >= 2, got " +
                            std::to_string(d));
    }
    std::vector<double> out(d);
    for (std::size_t k = 0; k < d / 2; ++k) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                               static_cast<double>(d));
        out[2 * k] = std::sin(t * w);
        out[2 * k + 1] = std::cos(t * w);
    }
    return out;
}

/**
 * Time conditioning for a batch: linear(γ(t)) → SiLU → per-stage projection.
 * Returns N×128, added channelwise to the bottleneck input.
 */
inline Tensor embed_time(std::span<const int> t, const ParamSet &params,
                         std::size_t d = 128) {
    std::vector<double> feats;
    feats.reserve(t.size() * d);
    for (int ti : t) {
        const auto g = timestep_embedding(static_cast<double>(ti), d);
        feats.insert(feats.end(), g.begin(), g.end());
    }
    const Tensor gamma({t.size(), d}, std::move(feats));
    const Tensor emb = linear(gamma, params.at("time_embed.weight"),
                              params.at("time_embed.bias"));
    return linear(silu(emb), params.at("time_proj.weight"),
                  params.at("time_proj.bias"));
}

namespace detail {

struct LayerShape {
    std::string name;
    Shape weight;
    std::size_t bias;
    std::size_t fan_in;
};

/// Every shared (classical) parameter in canonical order.
inline std::vector<LayerShape> shared_layers(const UNetConfig &cfg) {
    const std::size_t c = cfg.in_channels, d = cfg.time_embed_dim;
    const std::size_t b = UNetConfig::kBottleneckChannels;
    const std::size_t dec2_in = cfg.skip_connections ? 64 + 64 : 64;
    const std::size_t out_in = cfg.skip_connections ? 32 + 32 : 32;
    // Transposed convs: each output sees in·k²/stride² taps.
    return {
        {"enc1", {32, c, 3, 3}, 32, c * 9},
        {"enc2", {64, 32, 3, 3}, 64, 32 * 9},
        {"enc3", {b, 64, 3, 3}, b, 64 * 9},
        {"time_embed", {d, b}, b, d},
        {"time_proj", {b, b}, b, b},
        {"res.conv1", {b, b, 3, 3}, b, b * 9},
        {"res.conv2", {b, b, 3, 3}, b, b * 9},
        {"dec1", {b, 64, 4, 4}, 64, b * 4},
        {"dec2", {dec2_in, 32, 4, 4}, 32, dec2_in * 4},
        {"out", {c, out_in, 3, 3}, c, out_in * 9},
    };
}

inline Tensor kaiming_uniform(const Shape &shape, std::size_t fan_in, Rng &rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(numel_of(shape));
    for (double &x : v) {
        x = rng.uniform(-bound, bound);
    }
    return Tensor(shape, std::move(v), true);
}

} // namespace detail

/**
 * Fresh parameters. Shared layers draw from `shared_rng` in canonical order,
 * so classical and quantum models built from equal seeds agree on every
 * shared tensor; the quantum-only entries draw from `quantum_rng`.
 */
inline ParamSet init_unet_params(const UNetConfig &cfg, Rng &shared_rng,
                                 Rng &quantum_rng) {
    cfg.validate();
    ParamSet params;
    for (const auto &layer : detail::shared_layers(cfg)) {
        params.add(layer.name + ".weight",
                   detail::kaiming_uniform(layer.weight, layer.fan_in, shared_rng));
        params.add(layer.name + ".bias", Tensor::zeros({layer.bias}, true));
    }
    if (cfg.bottleneck == BottleneckKind::quantum) {
        const std::size_t b = UNetConfig::kBottleneckChannels;
        const auto n = static_cast<std::size_t>(cfg.circuit.n_qubits);
        const auto layers = static_cast<std::size_t>(cfg.circuit.n_layers);
        params.add("qattn.proj_in.weight",
                   detail::kaiming_uniform({b, n}, b, quantum_rng));
        params.add("qattn.proj_in.bias", Tensor::zeros({n}, true));
        std::vector<double> w(layers * n);
        for (double &x : w) {
            x = quantum_rng.uniform(-std::numbers::pi, std::numbers::pi);
        }
        params.add("qattn.circuit.weights", Tensor({layers, n}, std::move(w), true));
        params.add("qattn.proj_out.weight",
                   detail::kaiming_uniform({n, b}, n, quantum_rng));
        params.add("qattn.proj_out.bias", Tensor::zeros({b}, true));
    }
    return params;
}

inline quantum::AttentionParams attention_params(const ParamSet &params) {
    return {params.at("qattn.proj_in.weight"), params.at("qattn.proj_in.bias"),
            params.at("qattn.circuit.weights"), params.at("qattn.proj_out.weight"),
            params.at("qattn.proj_out.bias")};
}

/// Predicted noise for x_t (N×C×28×28), one timestep per sample.
inline Tensor unet_forward(const Tensor &x, std::span<const int> t,
                           const UNetConfig &cfg, const ParamSet &params,
                           int workers = 1) {
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != 28 ||
        x.dim(3) != 28) {
        throw ContractError("U-Net expects N×" + std::to_string(cfg.in_channels) +
                            "×28×28 input, got " + to_string(x.shape()));
    }
    if (t.size() != x.dim(0)) {
        throw ContractError("U-Net needs one timestep per sample");
    }
    auto conv = [&](const Tensor &in, const std::string &name, std::size_t stride) {
        return conv2d(in, params.at(name + ".weight"), params.at(name + ".bias"),
                      stride, 1);
    };
    auto up = [&](const Tensor &in, const std::string &name) {
        return conv_transpose2d(in, params.at(name + ".weight"),
                                params.at(name + ".bias"), 2, 1);
    };

    const Tensor h1 = silu(conv(x, "enc1", 1));
    const Tensor h2 = silu(conv(h1, "enc2", 2));
    const Tensor h3 = silu(conv(h2, "enc3", 2));

    const Tensor h = broadcast_add_channelwise(h3, embed_time(t, params, cfg.time_embed_dim));
    Tensor r = add(h, conv(silu(conv(h, "res.conv1", 1)), "res.conv2", 1));
    if (cfg.bottleneck == BottleneckKind::quantum) {
        r = quantum::quantum_attention_forward(r, attention_params(params),
                                               cfg.circuit, workers);
    }

    Tensor u = silu(up(r, "dec1"));
    if (cfg.skip_connections) {
        u = concat_channels(u, h2);
    }
    u = silu(up(u, "dec2"));
    if (cfg.skip_connections) {
        u = concat_channels(u, h1);
    }
    return conv(u, "out", 1);
}

/// Denoiser bundling a configuration with its live parameters.
class UNet {
  public:
    UNet(UNetConfig cfg, ParamSet params, int workers = 1)
        : cfg_(std::move(cfg)), params_(std::move(params)), workers_(workers) {
        cfg_.validate();
    }

    static UNet create(const UNetConfig &cfg, Rng &shared_rng, Rng &quantum_rng,
                       int workers = 1) {
        return UNet(cfg, init_unet_params(cfg, shared_rng, quantum_rng), workers);
    }

    Tensor predict_noise(const Tensor &x, std::span<const int> t) const {
        return unet_forward(x, t, cfg_, params_, workers_);
    }

    ParamSet &params() { return params_; }
    const ParamSet &params() const { return params_; }
    std::size_t channels() const { return cfg_.in_channels; }
    const UNetConfig &config() const { return cfg_; }
    int workers() const { return workers_; }

  private:
    UNetConfig cfg_;
    ParamSet params_;
    int workers_;
};

} // namespace qdiff
