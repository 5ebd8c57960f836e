#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/error.hpp"
#include "qdiff/parallel.hpp"

namespace qdiff::quantum {

/**
 * Variational layer template.
 *
 * paper_literal: trainable RZ per qubit followed by the CNOT chain.
 * ry_variational: identical wiring with trainable RY in place of RZ.
 *
 * With paper_literal every weight gate is diagonal and every CNOT permutes
 * basis states, so the Pauli-Z readout does not depend on the weights.
 */
enum class Ansatz { paper_literal, ry_variational };

inline std::string_view to_string(Ansatz a) {
    return a == Ansatz::paper_literal ? "paper_literal" : "ry_variational";
}

inline Ansatz parse_ansatz(std::string_view s) {
    if (s == "paper_literal") {
        return Ansatz::paper_literal;
    }
    if (s == "ry_variational") {
        return Ansatz::ry_variational;
    }
    throw UsageError("unknown ansatz '" + std::string(s) +
                     "' (expected paper_literal or ry_variational)");
}

struct CircuitConfig {
    int n_qubits = 16;
    int n_layers = 3;
    Ansatz ansatz = Ansatz::ry_variational;

    std::size_t weight_count() const {
        return static_cast<std::size_t>(n_layers) *
               static_cast<std::size_t>(n_qubits);
    }

    void validate() const {
        if (n_qubits < 1 || n_qubits > 30) {
            throw ContractError("circuit needs 1..30 qubits, got " +
                                std::to_string(n_qubits));
        }
        if (n_layers < 0) {
            throw ContractError("circuit layer count must be >= 0, got " +
                                std::to_string(n_layers));
        }
    }
};

/// 2^n amplitudes stored as separate real and imaginary arrays.
/// Qubit q corresponds to bit q of the basis-state index.
class StateVector {
  public:
    /// The all-zero basis state |0...0>.
    explicit StateVector(int n_qubits)
        : n_(n_qubits), re_(std::size_t{1} << n_qubits, 0.0),
          im_(std::size_t{1} << n_qubits, 0.0) {
        if (n_qubits < 1 || n_qubits > 30) {
            throw ContractError("state vector needs 1..30 qubits, got " +
                                std::to_string(n_qubits));
        }
        re_[0] = 1.0;
    }

    int n_qubits() const noexcept { return n_; }
    std::size_t size() const noexcept { return re_.size(); }

    std::complex<double> amplitude(std::size_t index) const {
        return {re_.at(index), im_.at(index)};
    }
    std::span<const double> real() const noexcept { return re_; }
    std::span<const double> imag() const noexcept { return im_; }

    /// Overwrite with an arbitrary (caller-normalized) state.
    void assign(std::span<const std::complex<double>> amps) {
        if (amps.size() != size()) {
            throw ContractError("assign: expected " + std::to_string(size()) +
                                " amplitudes, got " +
                                std::to_string(amps.size()));
        }
        for (std::size_t i = 0; i < amps.size(); ++i) {
            re_[i] = amps[i].real();
            im_[i] = amps[i].imag();
        }
    }

    /// [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]]
    void apply_ry(int qubit, double theta) {
        check_qubit(qubit);
        const double c = std::cos(0.5 * theta), s = std::sin(0.5 * theta);
        const std::size_t mask = std::size_t{1} << qubit, dim = size();
        for (std::size_t base = 0; base < dim; base += 2 * mask) {
            for (std::size_t i0 = base; i0 < base + mask; ++i0) {
                const std::size_t i1 = i0 + mask;
                const double r0 = re_[i0], r1 = re_[i1];
                const double m0 = im_[i0], m1 = im_[i1];
                re_[i0] = c * r0 - s * r1;
                re_[i1] = s * r0 + c * r1;
                im_[i0] = c * m0 - s * m1;
                im_[i1] = s * m0 + c * m1;
            }
        }
    }

    /// diag(e^{−iθ/2}, e^{iθ/2})
    void apply_rz(int qubit, double theta) {
        check_qubit(qubit);
        const double c = std::cos(0.5 * theta), s = std::sin(0.5 * theta);
        const std::size_t mask = std::size_t{1} << qubit, dim = size();
        for (std::size_t base = 0; base < dim; base += 2 * mask) {
            for (std::size_t i0 = base; i0 < base + mask; ++i0) {
                const std::size_t i1 = i0 + mask;
                const double r0 = re_[i0], m0 = im_[i0];
                re_[i0] = c * r0 + s * m0;
                im_[i0] = c * m0 - s * r0;
                const double r1 = re_[i1], m1 = im_[i1];
                re_[i1] = c * r1 - s * m1;
                im_[i1] = c * m1 + s * r1;
            }
        }
    }

    void apply_cnot(int control, int target) {
        check_qubit(control);
        check_qubit(target);
        if (control == target) {
            throw ContractError("CNOT control and target are both qubit " +
                                std::to_string(control));
        }
        const std::size_t cm = std::size_t{1} << control;
        const std::size_t tm = std::size_t{1} << target;
        for (std::size_t i = 0; i < size(); ++i) {
            if ((i & cm) && !(i & tm)) {
                std::swap(re_[i], re_[i | tm]);
                std::swap(im_[i], im_[i | tm]);
            }
        }
    }

    double norm_squared() const {
        double acc = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            acc += re_[i] * re_[i] + im_[i] * im_[i];
        }
        return acc;
    }

    /// <Z_q> for every qubit.
    std::vector<double> expect_z() const {
        std::vector<double> z(static_cast<std::size_t>(n_), 0.0);
        for (std::size_t i = 0; i < size(); ++i) {
            const double p = re_[i] * re_[i] + im_[i] * im_[i];
            for (int q = 0; q < n_; ++q) {
                z[static_cast<std::size_t>(q)] += ((i >> q) & 1U) ? -p : p;
            }
        }
        return z;
    }

  private:
    void check_qubit(int q) const {
        if (q < 0 || q >= n_) {
            throw ContractError("qubit index " + std::to_string(q) +
                                " out of range for " + std::to_string(n_) +
                                " qubits");
        }
    }

    int n_;
    std::vector<double> re_, im_;
};

namespace detail {

inline void check_arguments(const CircuitConfig &cfg,
                            std::span<const double> inputs,
                            std::span<const double> weights) {
    cfg.validate();
    if (inputs.size() != static_cast<std::size_t>(cfg.n_qubits)) {
        throw ContractError("circuit expects " + std::to_string(cfg.n_qubits) +
                            " inputs, got " + std::to_string(inputs.size()));
    }
    if (weights.size() != cfg.weight_count()) {
        throw ContractError("circuit expects " +
                            std::to_string(cfg.weight_count()) +
                            " weights, got " + std::to_string(weights.size()));
    }
}

inline void apply_encoding(StateVector &psi, std::span<const double> inputs) {
    for (std::size_t q = 0; q < inputs.size(); ++q) {
        psi.apply_ry(static_cast<int>(q), inputs[q]);
    }
}

/// One variational layer; `shift` is added to the angle of qubit `shifted`.
inline void apply_layer(StateVector &psi, const CircuitConfig &cfg,
                        std::span<const double> layer_weights,
                        int shifted = -1, double shift = 0.0) {
    for (int q = 0; q < cfg.n_qubits; ++q) {
        const double angle = layer_weights[static_cast<std::size_t>(q)] +
                             (q == shifted ? shift : 0.0);
        if (cfg.ansatz == Ansatz::paper_literal) {
            psi.apply_rz(q, angle);
        } else {
            psi.apply_ry(q, angle);
        }
    }
    for (int q = 0; q + 1 < cfg.n_qubits; ++q) {
        psi.apply_cnot(q, q + 1);
    }
}

inline std::span<const double> layer_slice(const CircuitConfig &cfg,
                                           std::span<const double> weights,
                                           int layer) {
    const auto n = static_cast<std::size_t>(cfg.n_qubits);
    return weights.subspan(static_cast<std::size_t>(layer) * n, n);
}

} // namespace detail

/**
 * Pauli-Z readout of the encoded variational circuit.
 *
 * RY(inputs[q]) on every qubit, then n_layers × (weight rotations, CNOT
 * chain 0→1, 1→2, ..., n−2→n−1). weights[l·n + q] belongs to layer l,
 * qubit q.
 */
inline std::vector<double> run_circuit(const CircuitConfig &cfg,
                                       std::span<const double> inputs,
                                       std::span<const double> weights) {
    detail::check_arguments(cfg, inputs, weights);
    StateVector psi(cfg.n_qubits);
    detail::apply_encoding(psi, inputs);
    for (int l = 0; l < cfg.n_layers; ++l) {
        detail::apply_layer(psi, cfg, detail::layer_slice(cfg, weights, l));
    }
    return psi.expect_z();
}

/**
 * Parameter-shift Jacobian of the readout.
 *
 * Rows are parameters: first the n encoding angles, then the L·n weights in
 * layer-major order. Columns are the n expectations. Each entry is
 * (<Z>(φ + π/2) − <Z>(φ − π/2)) / 2, exact for RY and RZ generators.
 */
struct ShiftJacobian {
    std::size_t n_params = 0;
    std::size_t n_outputs = 0;
    std::vector<double> values; // n_params × n_outputs, row-major

    double operator()(std::size_t param, std::size_t output) const {
        return values[param * n_outputs + output];
    }
};

inline ShiftJacobian parameter_shift_jacobian(const CircuitConfig &cfg,
                                              std::span<const double> inputs,
                                              std::span<const double> weights,
                                              int workers = 1) {
    detail::check_arguments(cfg, inputs, weights);
    const auto n = static_cast<std::size_t>(cfg.n_qubits);
    const std::size_t n_params = n + cfg.weight_count();
    constexpr double half_pi = std::numbers::pi / 2.0;

    // State at the start of each variational layer; weight shifts in layer l
    // only need to replay layers l..L-1.
    std::vector<StateVector> layer_start;
    layer_start.reserve(static_cast<std::size_t>(cfg.n_layers));
    {
        StateVector psi(cfg.n_qubits);
        detail::apply_encoding(psi, inputs);
        for (int l = 0; l < cfg.n_layers; ++l) {
            layer_start.push_back(psi);
            detail::apply_layer(psi, cfg, detail::layer_slice(cfg, weights, l));
        }
    }

    std::vector<std::vector<double>> shifted(2 * n_params);
    qdiff::detail::parallel_for(2 * n_params, workers, [&](std::size_t task) {
        const std::size_t p = task / 2;
        const double shift = (task % 2 == 0) ? half_pi : -half_pi;
        int first_layer = 0;
        StateVector psi(cfg.n_qubits);
        if (p < n) {
            std::vector<double> enc(inputs.begin(), inputs.end());
            enc[p] += shift;
            detail::apply_encoding(psi, enc);
        } else {
            const std::size_t w = p - n;
            first_layer = static_cast<int>(w / n);
            psi = layer_start[static_cast<std::size_t>(first_layer)];
            detail::apply_layer(psi, cfg,
                                detail::layer_slice(cfg, weights, first_layer),
                                static_cast<int>(w % n), shift);
            ++first_layer;
        }
        for (int l = first_layer; l < cfg.n_layers; ++l) {
            detail::apply_layer(psi, cfg, detail::layer_slice(cfg, weights, l));
        }
        shifted[task] = psi.expect_z();
    });

    ShiftJacobian jac{n_params, n, std::vector<double>(n_params * n)};
    for (std::size_t p = 0; p < n_params; ++p) {
        for (std::size_t k = 0; k < n; ++k) {
            jac.values[p * n + k] =
                0.5 * (shifted[2 * p][k] - shifted[2 * p + 1][k]);
        }
    }
    return jac;
}

struct ShiftGradient {
    std::vector<double> d_inputs;  // n
    std::vector<double> d_weights; // L·n, layer-major
};

/// Upstream-contracted parameter-shift gradient: d = J · upstream.
inline ShiftGradient parameter_shift_grad(const CircuitConfig &cfg,
                                          std::span<const double> inputs,
                                          std::span<const double> weights,
                                          std::span<const double> upstream,
                                          int workers = 1) {
    if (upstream.size() != static_cast<std::size_t>(cfg.n_qubits)) {
        throw ContractError("upstream gradient length " +
                            std::to_string(upstream.size()) +
                            " != qubit count " +
                            std::to_string(cfg.n_qubits));
    }
    const ShiftJacobian jac =
        parameter_shift_jacobian(cfg, inputs, weights, workers);
    const std::size_t n = jac.n_outputs;
    std::vector<double> contracted(jac.n_params, 0.0);
    for (std::size_t p = 0; p < jac.n_params; ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += jac(p, k) * upstream[k];
        }
        contracted[p] = acc;
    }
    ShiftGradient g;
    g.d_inputs.assign(contracted.begin(), contracted.begin() + static_cast<long>(n));
    g.d_weights.assign(contracted.begin() + static_cast<long>(n), contracted.end());
    return g;
}

} // namespace qdiff::quantum
