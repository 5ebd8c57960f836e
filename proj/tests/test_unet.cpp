#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qdiff/unet.hpp"
#include "support/oracles.hpp"

using namespace qdiff;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

UNetConfig config(BottleneckKind kind, std::size_t channels = 1) {
    UNetConfig cfg;
    cfg.in_channels = channels;
    cfg.bottleneck = kind;
    cfg.circuit = {16, 3, quantum::Ansatz::ry_variational};
    return cfg;
}

ParamSet make_params(const UNetConfig &cfg, std::uint64_t seed = 5) {
    Rng shared(seed), q(seed + 1);
    return init_unet_params(cfg, shared, q);
}

/**
 * Central-difference check of one entry per parameter tensor.
 * Relative error uses max(|analytic|, |fd|, 1e-7) as the scale.
 */
void spot_check_model(const UNetConfig &cfg, std::uint64_t seed) {
    ParamSet params = make_params(cfg, seed);
    std::mt19937_64 rng(seed);
    const auto x = oracle::random_tensor({1, cfg.in_channels, 28, 28}, rng, false, -1.0, 1.0);
    const auto target = oracle::random_tensor({1, cfg.in_channels, 28, 28}, rng, false, -1.0, 1.0);
    const std::vector<int> t = {37};
    auto loss = [&] { return mse_loss(unet_forward(x, t, cfg, params), target); };
    backward(loss());
    const double h = 1e-5;
    int checked = 0;
    for (auto &[name, tensor] : params) {
        const auto grad = vec(tensor.grad());
        auto values = tensor.mutable_data();
        std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
        const std::size_t i = pick(rng);
        const double saved = values[i];
        values[i] = saved + h;
        const double up = loss().item();
        values[i] = saved - h;
        const double down = loss().item();
        values[i] = saved;
        const double fd = (up - down) / (2 * h);
        const double scale = std::max({std::abs(grad[i]), std::abs(fd), 1e-7});
        EXPECT_LT(std::abs(grad[i] - fd) / scale, 1e-4) << name << "[" << i << "] "
                                                        << grad[i] << " vs " << fd;
        ++checked;
    }
    EXPECT_GE(checked, 20);
}

} // namespace

TEST(TimestepEmbedding, Values) {
    const auto zero = timestep_embedding(0.0, 8);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(zero[2 * k], 0.0);
        EXPECT_EQ(zero[2 * k + 1], 1.0);
    }
    const auto e = timestep_embedding(13.0, 128);
    EXPECT_EQ(e[0], std::sin(13.0));
    EXPECT_EQ(e[1], std::cos(13.0));
    EXPECT_NEAR(e[2], std::sin(13.0 * std::pow(10000.0, -2.0 / 128)), 1e-15);
    for (std::size_t k = 0; k < 64; ++k) {
        EXPECT_LE(std::abs(e[2 * k]), 1.0);
        EXPECT_NEAR(e[2 * k] * e[2 * k] + e[2 * k + 1] * e[2 * k + 1], 1.0, 1e-12);
    }
    EXPECT_THROW(timestep_embedding(1.0, 7), ContractError);
    EXPECT_THROW(timestep_embedding(1.0, 0), ContractError);
}

TEST(EmbedTime, ZeroWeightsAndDistinctTimes) {
    ParamSet p = make_params(config(BottleneckKind::classical));
    const std::vector<int> ts = {3, 150};
    const auto e = embed_time(ts, p);
    ASSERT_EQ(e.shape(), (Shape{2, 128}));
    bool differ = false;
    for (std::size_t i = 0; i < 128; ++i) differ = differ || e.data()[i] != e.data()[128 + i];
    EXPECT_TRUE(differ);

    for (const char *name : {"time_embed.weight", "time_embed.bias"}) {
        for (double &v : p.at(name).mutable_data()) v = 0.0;
    }
    // SiLU(0) = 0, so only the projection bias survives (zero at init).
    const auto z = embed_time(ts, p);
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedTime, GradientMatchesFiniteDifferences) {
    ParamSet p = make_params(config(BottleneckKind::classical));
    std::mt19937_64 rng(3);
    const std::vector<int> ts = {5, 80};
    const auto target = oracle::random_tensor({2, 128}, rng);
    auto loss = [&] { return mse_loss(embed_time(ts, p), target); };
    backward(loss());
    Tensor &w = p.at("time_embed.weight");
    const auto grad = vec(w.grad());
    auto values = w.mutable_data();
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    for (int k = 0; k < 20; ++k) {
        const std::size_t i = pick(rng);
        const double saved = values[i];
        values[i] = saved + 1e-5;
        const double up = loss().item();
        values[i] = saved - 1e-5;
        const double down = loss().item();
        values[i] = saved;
        EXPECT_NEAR(grad[i], (up - down) / 2e-5, 1e-6);
    }
}

TEST(UNet, OutputShapeMatchesInput) {
    for (auto kind : {BottleneckKind::classical, BottleneckKind::quantum}) {
        for (std::size_t c : {1u, 3u}) {
            const auto cfg = config(kind, c);
            const ParamSet p = make_params(cfg);
            const auto x = Tensor::zeros({2, c, 28, 28});
            const std::vector<int> t = {1, 100};
            EXPECT_EQ(unet_forward(x, t, cfg, p).shape(), x.shape());
        }
    }
    auto skip = config(BottleneckKind::classical);
    skip.skip_connections = true;
    const std::vector<int> t = {4};
    EXPECT_EQ(unet_forward(Tensor::zeros({1, 1, 28, 28}), t, skip, make_params(skip)).shape(),
              (Shape{1, 1, 28, 28}));
}

TEST(UNet, ContractViolationsRejected) {
    const auto cfg = config(BottleneckKind::classical);
    const ParamSet p = make_params(cfg);
    const std::vector<int> t = {1};
    EXPECT_THROW(unet_forward(Tensor::zeros({1, 3, 28, 28}), t, cfg, p), ContractError);
    EXPECT_THROW(unet_forward(Tensor::zeros({1, 1, 14, 14}), t, cfg, p), ContractError);
    const std::vector<int> two = {1, 2};
    EXPECT_THROW(unet_forward(Tensor::zeros({1, 1, 28, 28}), two, cfg, p), ContractError);
    auto bad = cfg;
    bad.in_channels = 2;
    EXPECT_THROW(bad.validate(), ContractError);
}

TEST(UNet, AllOnesGateMatchesClassicalBitForBit) {
    const auto ccfg = config(BottleneckKind::classical);
    const auto qcfg = config(BottleneckKind::quantum);
    const ParamSet classical = make_params(ccfg, 21);
    ParamSet quantum = make_params(qcfg, 21);
    for (double &v : quantum.at("qattn.proj_out.weight").mutable_data()) v = 0.0;
    for (double &v : quantum.at("qattn.proj_out.bias").mutable_data()) v = 1.0;
    std::mt19937_64 rng(4);
    const auto x = oracle::random_tensor({2, 1, 28, 28}, rng, false, -1.0, 1.0);
    const std::vector<int> t = {9, 170};
    EXPECT_EQ(vec(unet_forward(x, t, ccfg, classical).data()),
              vec(unet_forward(x, t, qcfg, quantum).data()));
}

TEST(UNet, ParameterNamesAndCounts) {
    const ParamSet c = make_params(config(BottleneckKind::classical));
    const ParamSet q = make_params(config(BottleneckKind::quantum));
    // Hand-counted from the channel plan (see shared_layers).
    EXPECT_EQ(c.count(), 585089u);
    EXPECT_EQ(make_params(config(BottleneckKind::classical, 3)).count(), 586243u);
    // |proj_in| + |proj_out| + L·n = (128·16 + 16) + (16·128 + 128) + 3·16
    EXPECT_EQ(q.count() - c.count(), 4288u);
    for (const auto &[name, t] : c) {
        ASSERT_TRUE(q.contains(name)) << name;
        EXPECT_EQ(vec(q.at(name).data()), vec(t.data())) << name;
    }
    for (const auto &[name, t] : q) {
        if (!c.contains(name)) EXPECT_EQ(name.rfind("qattn.", 0), 0u) << name;
    }
    for (double w : q.at("qattn.circuit.weights").data()) {
        EXPECT_GE(w, -std::numbers::pi);
        EXPECT_LE(w, std::numbers::pi);
    }
}

TEST(UNet, PureForward) {
    const auto cfg = config(BottleneckKind::quantum);
    const ParamSet p = make_params(cfg);
    std::mt19937_64 rng(6);
    const auto x = oracle::random_tensor({1, 1, 28, 28}, rng, false, -1.0, 1.0);
    const std::vector<int> t = {50};
    EXPECT_EQ(vec(unet_forward(x, t, cfg, p).data()), vec(unet_forward(x, t, cfg, p).data()));
}

TEST(UNet, ClassicalGradientSpotCheck) { spot_check_model(config(BottleneckKind::classical), 31); }

TEST(UNet, QuantumGradientSpotCheck) { spot_check_model(config(BottleneckKind::quantum), 32); }

TEST(UNet, SkipConnectionGradientSpotCheck) {
    auto cfg = config(BottleneckKind::classical);
    cfg.skip_connections = true;
    spot_check_model(cfg, 33);
}
