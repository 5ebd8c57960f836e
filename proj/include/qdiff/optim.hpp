#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qdiff/tensor.hpp"

namespace qdiff {

/**
 * Ordered set of named trainable tensors.
 *
 * Insertion order is the canonical parameter order: checkpoints, optimizer
 * moments and the EMA shadow all follow it.
 */
class ParamSet {
  public:
    Tensor &add(std::string name, Tensor value) {
        if (find(name) != nullptr) {
            throw ContractError("duplicate parameter name '" + name + "'");
        }
        entries_.emplace_back(std::move(name), std::move(value));
        return entries_.back().second;
    }

    const Tensor &at(const std::string &name) const {
        if (const Tensor *t = find(name)) {
            return *t;
        }
        throw ContractError("unknown parameter '" + name + "'");
    }

    Tensor &at(const std::string &name) {
        return const_cast<Tensor &>(std::as_const(*this).at(name));
    }

    const Tensor *find(const std::string &name) const {
        for (const auto &[n, t] : entries_) {
            if (n == name) {
                return &t;
            }
        }
        return nullptr;
    }

    bool contains(const std::string &name) const {
        return find(name) != nullptr;
    }

    std::size_t size() const noexcept { return entries_.size(); }

    /// Total number of scalar parameters.
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto &e : entries_) {
            n += e.second.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto &e : entries_) {
            e.second.zero_grad();
        }
    }

    /// Deep copy; the copies are fresh leaves with the given grad flag.
    ParamSet clone(bool requires_grad) const {
        ParamSet out;
        for (const auto &[n, t] : entries_) {
            out.add(n, t.detach(requires_grad));
        }
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamOptions {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam moments for one ParamSet.
class Adam {
  public:
    Adam(const ParamSet &params, AdamOptions opts = {}) : opts_(opts) {
        for (const auto &[name, t] : params) {
            names_.push_back(name);
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }

    /**
     * One in-place update of every parameter from its accumulated gradient.
     *
     * Throws ContractError naming the first parameter without a gradient; in
     * that case nothing is modified.
     */
    void step(ParamSet &params) {
        if (params.size() != names_.size()) {
            throw ContractError("Adam: parameter set changed size");
        }
        std::size_t k = 0;
        for (auto &[name, t] : params) {
            if (name != names_[k] || t.numel() != m_[k].size()) {
                throw ContractError("Adam: parameter '" + name +
                                    "' does not match optimizer state");
            }
            if (!t.has_grad()) {
                throw ContractError("Adam: missing gradient for parameter '" +
                                    name + "'");
            }
            ++k;
        }

        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        k = 0;
        for (auto &[name, t] : params) {
            auto value = t.mutable_data();
            const auto grad = t.grad();
            auto &m = m_[k];
            auto &v = v_[k];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double g = grad[i];
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                value[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
            ++k;
        }
    }

    std::uint64_t steps() const noexcept { return t_; }
    const AdamOptions &options() const noexcept { return opts_; }

  private:
    AdamOptions opts_;
    std::uint64_t t_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> m_, v_;
};

/// theta_ema <- decay * theta_ema + (1 - decay) * theta, once per optimizer step.
class EmaShadow {
  public:
    EmaShadow(const ParamSet &params, double decay)
        : shadow_(params.clone(false)), decay_(decay) {
        if (!(decay > 0.0 && decay < 1.0)) {
            throw ContractError("EMA decay must lie in (0, 1), got " +
                                std::to_string(decay));
        }
    }

    /// Resume from a stored shadow (e.g. a checkpoint).
    static EmaShadow from_shadow(ParamSet shadow, double decay) {
        EmaShadow ema(shadow, decay);
        return ema;
    }

    void update(const ParamSet &params) {
        if (params.size() != shadow_.size()) {
            throw ContractError("EMA: parameter set size mismatch");
        }
        auto it = params.begin();
        for (auto &[name, s] : shadow_) {
            const auto &[pname, p] = *it++;
            if (pname != name || p.shape() != s.shape()) {
                throw ContractError("EMA: parameter '" + pname +
                                    "' does not mirror shadow '" + name + "'");
            }
        }
        it = params.begin();
        for (auto &entry : shadow_) {
            auto dst = entry.second.mutable_data();
            const auto src = (it++)->second.data();
            // Written as s + (1 - decay)(p - s) so that s == p is an exact
            // fixed point in floating point.
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += (1.0 - decay_) * (src[i] - dst[i]);
            }
        }
    }

    const ParamSet &params() const noexcept { return shadow_; }
    ParamSet &params() noexcept { return shadow_; }
    double decay() const noexcept { return decay_; }

  private:
    ParamSet shadow_;
    double decay_;
};

} // namespace qdiff
