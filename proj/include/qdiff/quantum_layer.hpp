#pragma once

#include <span>
#include <string>
#include <vector>

#include "qdiff/ops.hpp"
#include "qdiff/quantum.hpp"

namespace qdiff::quantum {

/**
 * Batched circuit readout as a tape operation.
 *
 * angles: N×n encoding angles, weights: L×n. Returns N×n Pauli-Z
 * expectations. The backward pass runs the parameter-shift rule per sample,
 * yielding exact gradients for both the angles and the weights.
 */
inline Tensor circuit_expectation(const Tensor &angles, const Tensor &weights,
                                  const CircuitConfig &cfg, int workers = 1) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.n_qubits);
    if (angles.rank() != 2 || angles.dim(1) != n) {
        throw DimensionError("circuit_expectation: angles " +
                             qdiff::to_string(angles.shape()) + " need " +
                             std::to_string(n) + " columns");
    }
    if (weights.numel() != cfg.weight_count()) {
        throw DimensionError("circuit_expectation: weights " +
                             qdiff::to_string(weights.shape()) + " need " +
                             std::to_string(cfg.weight_count()) + " entries");
    }
    const std::size_t batch = angles.dim(0);
    std::vector<double> out(batch * n);
    qdiff::detail::parallel_for(batch, workers, [&](std::size_t s) {
        const auto z = run_circuit(cfg, angles.data().subspan(s * n, n),
                                   weights.data());
        std::copy(z.begin(), z.end(), out.begin() + static_cast<long>(s * n));
    });

    return Tensor::make_result(
        {batch, n}, std::move(out), "circuit_expectation", {angles, weights},
        [cfg, batch, n, workers](qdiff::detail::Node &self) {
            auto &an = *self.inputs[0];
            auto &wn = *self.inputs[1];
            for (std::size_t s = 0; s < batch; ++s) {
                const std::span<const double> upstream(self.grad.data() + s * n, n);
                const auto g = parameter_shift_grad(
                    cfg, std::span<const double>(an.data).subspan(s * n, n),
                    wn.data, upstream, workers);
                if (an.requires_grad) {
                    auto &ga = an.ensure_grad();
                    for (std::size_t k = 0; k < n; ++k) {
                        ga[s * n + k] += g.d_inputs[k];
                    }
                }
                if (wn.requires_grad) {
                    auto &gw = wn.ensure_grad();
                    for (std::size_t k = 0; k < gw.size(); ++k) {
                        gw[k] += g.d_weights[k];
                    }
                }
            }
        });
}

/// Parameters of the quantum attention gate.
struct AttentionParams {
    Tensor proj_in_w;  // C×n
    Tensor proj_in_b;  // n
    Tensor weights;    // L×n
    Tensor proj_out_w; // n×C
    Tensor proj_out_b; // C
};

/**
 * Channelwise quantum gating of a bottleneck feature map.
 *
 * z = GAP(x) → linear to n angles → circuit readout in [−1, 1]^n → linear
 * back to C gate values → x ⊙ gate, broadcast over the spatial plane.
 */
inline Tensor quantum_attention_forward(const Tensor &x,
                                        const AttentionParams &p,
                                        const CircuitConfig &cfg,
                                        int workers = 1) {
    if (x.rank() != 4) {
        throw ContractError("quantum attention expects an N×C×H×W map, got " +
                            qdiff::to_string(x.shape()));
    }
    if (p.proj_in_w.rank() != 2 || x.dim(1) != p.proj_in_w.dim(0)) {
        throw ContractError("quantum attention: feature map has " +
                            std::to_string(x.dim(1)) +
                            " channels but input projection is " +
                            qdiff::to_string(p.proj_in_w.shape()));
    }
    if (p.proj_in_w.dim(1) != static_cast<std::size_t>(cfg.n_qubits)) {
        throw ContractError("quantum attention: input projection " +
                            qdiff::to_string(p.proj_in_w.shape()) + " does not map to " +
                            std::to_string(cfg.n_qubits) + " qubits");
    }
    const Tensor pooled = global_avg_pool(x);
    const Tensor angles = linear(pooled, p.proj_in_w, p.proj_in_b);
    const Tensor readout = circuit_expectation(angles, p.weights, cfg, workers);
    const Tensor gate = linear(readout, p.proj_out_w, p.proj_out_b);
    return broadcast_mul_channelwise(x, gate);
}

} // namespace qdiff::quantum
