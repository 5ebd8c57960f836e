#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qdiff/data.hpp"
#include "qdiff/ops.hpp"
#include "qdiff/optim.hpp"
#include "qdiff/rng.hpp"

namespace qdiff {

/**
 * Cosine noise schedule over steps t = 0..T.
 *
 * alpha_bar(t) = cos²(((t/T + s)/(1 + s))·π/2), evaluated as
 * sin²(((1 − t/T)/(1 + s))·π/2) so that alpha_bar(T) is exactly zero.
 * beta(t) = 1 − alpha_bar(t)/alpha_bar(t−1), clipped to beta_clip.
 */
class NoiseSchedule {
  public:
    struct Options {
        int steps = 1000;
        double offset = 0.008;
        double beta_clip = 0.999;
        /// Divide by alpha_bar(0) (the f(t)/f(0) form). Off by default.
        bool normalize_alpha_bar = false;
    };

    explicit NoiseSchedule(Options opts) : opts_(opts) {
        if (opts.steps < 1) {
            throw ContractError("schedule needs T >= 1, got " +
                                std::to_string(opts.steps));
        }
        if (!(opts.offset > 0.0)) {
            throw ContractError("schedule needs s > 0, got " +
                                std::to_string(opts.offset));
        }
        if (!(opts.beta_clip > 0.0 && opts.beta_clip < 1.0)) {
            throw ContractError("beta clip must lie in (0, 1)");
        }
        const auto T = static_cast<double>(opts.steps);
        alpha_bar_.resize(static_cast<std::size_t>(opts.steps) + 1);
        for (int t = 0; t <= opts.steps; ++t) {
            const double angle =
                (1.0 - t / T) / (1.0 + opts.offset) * (std::numbers::pi / 2.0);
            const double sn = std::sin(angle);
            alpha_bar_[static_cast<std::size_t>(t)] = sn * sn;
        }
        if (opts.normalize_alpha_bar) {
            const double a0 = alpha_bar_[0];
            for (double &a : alpha_bar_) {
                a /= a0;
            }
        }
        beta_.resize(static_cast<std::size_t>(opts.steps));
        for (int t = 1; t <= opts.steps; ++t) {
            const double b = 1.0 - alpha_bar(t) / alpha_bar(t - 1);
            beta_[static_cast<std::size_t>(t - 1)] = std::min(b, opts.beta_clip);
        }
    }

    /// Hand-built schedule (tests and oracles): alpha_bar has T + 1 entries.
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar,
                                        double beta_clip = 0.999) {
        if (alpha_bar.size() < 2) {
            throw ContractError("custom schedule needs at least 2 alpha_bar values");
        }
        NoiseSchedule s(Options{});
        s.opts_.steps = static_cast<int>(alpha_bar.size()) - 1;
        s.opts_.beta_clip = beta_clip;
        s.alpha_bar_ = std::move(alpha_bar);
        s.beta_.assign(s.alpha_bar_.size() - 1, 0.0);
        for (int t = 1; t <= s.steps(); ++t) {
            const double b = 1.0 - s.alpha_bar(t) / s.alpha_bar(t - 1);
            s.beta_[static_cast<std::size_t>(t - 1)] = std::min(b, beta_clip);
        }
        return s;
    }

    int steps() const noexcept { return opts_.steps; }
    const Options &options() const noexcept { return opts_; }

    double alpha_bar(int t) const {
        check_step(t, 0);
        return alpha_bar_[static_cast<std::size_t>(t)];
    }
    double beta(int t) const {
        check_step(t, 1);
        return beta_[static_cast<std::size_t>(t - 1)];
    }
    double alpha(int t) const { return 1.0 - beta(t); }

  private:
    void check_step(int t, int lowest) const {
        if (t < lowest || t > opts_.steps) {
            throw ContractError("timestep " + std::to_string(t) +
                                " outside [" + std::to_string(lowest) + ", " +
                                std::to_string(opts_.steps) + "]");
        }
    }

    Options opts_;
    std::vector<double> alpha_bar_;
    std::vector<double> beta_;
};

inline NoiseSchedule build_cosine_schedule(int T, double s,
                                           bool normalize_alpha_bar = false) {
    return NoiseSchedule({T, s, 0.999, normalize_alpha_bar});
}

/**
 * x_t = sqrt(alpha_bar_t)·x0 + sqrt(1 − alpha_bar_t)·eps, with one timestep
 * per leading-axis sample (1 <= t <= T).
 */
inline Tensor forward_sample(const Tensor &x0, std::span<const int> t,
                             const Tensor &eps, const NoiseSchedule &sched) {
    if (x0.shape() != eps.shape()) {
        throw DimensionError("forward_sample: x0 " + to_string(x0.shape()) +
                             " vs eps " + to_string(eps.shape()));
    }
    if (x0.rank() == 0 || t.size() != x0.dim(0)) {
        throw ContractError("forward_sample: need one timestep per sample");
    }
    const std::size_t per = x0.numel() / x0.dim(0);
    std::vector<double> out(x0.numel());
    for (std::size_t s = 0; s < t.size(); ++s) {
        if (t[s] < 1 || t[s] > sched.steps()) {
            throw ContractError("forward_sample: timestep " +
                                std::to_string(t[s]) + " outside [1, " +
                                std::to_string(sched.steps()) + "]");
        }
        const double ab = sched.alpha_bar(t[s]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
            out[i] = a * x0.data()[i] + b * eps.data()[i];
        }
    }
    return Tensor(x0.shape(), std::move(out));
}

/// Single shared timestep for the whole tensor.
inline Tensor forward_sample(const Tensor &x0, int t, const Tensor &eps,
                             const NoiseSchedule &sched) {
    if (x0.rank() == 0) {
        throw ContractError("forward_sample: need at least one axis");
    }
    std::vector<int> ts(x0.dim(0), t);
    return forward_sample(x0, ts, eps, sched);
}

/// Something that predicts the noise in x_t and owns trainable parameters.
template <class M>
concept Denoiser = requires(M &m, const M &cm, const Tensor &x,
                            std::span<const int> t) {
    { cm.predict_noise(x, t) } -> std::same_as<Tensor>;
    { m.params() } -> std::same_as<ParamSet &>;
    { cm.channels() } -> std::convertible_to<std::size_t>;
};

/// A model with its optimizer state and EMA shadow.
template <Denoiser Model> struct Trainer {
    Trainer(Model m, AdamOptions adam_opts, double ema_decay)
        : model(std::move(m)), adam(model.params(), adam_opts),
          ema(model.params(), ema_decay) {}

    Model model;
    Adam adam;
    EmaShadow ema;
};

/**
 * One optimization step on a [-1, 1] batch.
 *
 * Draws t_i ~ U{1..T} per sample, then eps ~ N(0, I), forms x_t, and
 * minimizes mse(model(x_t, t), eps). Applies Adam and the EMA update.
 * Returns the batch loss.
 */
template <Denoiser Model>
double train_step(Trainer<Model> &trainer, const ImageBatch &batch,
                  const NoiseSchedule &sched, Rng &rng) {
    if (batch.normalization != Normalization::signed_unit) {
        throw ContractError("train_step expects a batch normalized to [-1, 1]");
    }
    if (batch.channels() != trainer.model.channels()) {
        throw ContractError("train_step: batch has " +
                            std::to_string(batch.channels()) +
                            " channels, model expects " +
                            std::to_string(trainer.model.channels()));
    }
    if (batch.empty()) {
        throw ContractError("train_step: empty batch");
    }
    std::vector<int> t(batch.size());
    for (int &ti : t) {
        ti = rng.uniform_int(1, sched.steps());
    }
    std::vector<double> noise(batch.data.numel());
    for (double &e : noise) {
        e = rng.normal();
    }
    const Tensor eps(batch.data.shape(), std::move(noise));
    const Tensor xt = forward_sample(batch.data, t, eps, sched);

    ParamSet &params = trainer.model.params();
    params.zero_grad();
    const Tensor loss = mse_loss(trainer.model.predict_noise(xt, t), eps);
    backward(loss);
    // Parameters the loss does not reach still take an Adam step with a zero
    // gradient.
    for (auto &entry : params) {
        if (!entry.second.has_grad()) {
            auto &g = entry.second.node()->ensure_grad();
            std::fill(g.begin(), g.end(), 0.0);
        }
    }
    trainer.adam.step(params);
    trainer.ema.update(params);
    return loss.item();
}

/**
 * Ancestral DDPM sampler.
 *
 * Starting from x_T ~ N(0, I), for t = T..1:
 *   x_{t−1} = (x_t − beta_t / sqrt(1 − alpha_bar_t) · eps_hat) / sqrt(alpha_t)
 *             + sqrt(beta_t) · z,     z = 0 at t = 1.
 * The result is clamped to [-1, 1].
 *
 * `predict` is called as predict(x_t, span of N timesteps) -> Tensor.
 */
template <class Predict>
ImageBatch reverse_sample(Predict &&predict, const NoiseSchedule &sched,
                          std::size_t n, std::size_t channels, Rng &rng,
                          std::size_t image_size = kImageSize) {
    if (n == 0 || channels == 0) {
        throw ContractError("reverse_sample: need n >= 1 and channels >= 1");
    }
    const Shape shape{n, channels, image_size, image_size};
    std::vector<double> x(numel_of(shape));
    for (double &v : x) {
        v = rng.normal();
    }
    std::vector<int> ts(n);
    for (int t = sched.steps(); t >= 1; --t) {
        std::fill(ts.begin(), ts.end(), t);
        const Tensor eps_hat = predict(Tensor(shape, x), std::span<const int>(ts));
        if (eps_hat.shape() != shape) {
            throw DimensionError("reverse_sample: model returned " +
                                 to_string(eps_hat.shape()) + ", expected " +
                                 to_string(shape));
        }
        const double beta = sched.beta(t);
        const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double sigma = std::sqrt(beta);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat.data()[i]);
            if (t > 1) {
                x[i] += sigma * rng.normal();
            }
        }
    }
    for (double &v : x) {
        v = std::clamp(v, -1.0, 1.0);
    }
    return {Tensor(shape, std::move(x)), std::vector<int>(n, -1),
            Normalization::signed_unit};
}

} // namespace qdiff
