#include <gtest/gtest.h>

#include <random>

#include "qdiff/ops.hpp"
#include "support/oracles.hpp"

using namespace qdiff;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double weighted_sum(const Tensor &out, const std::vector<double> &w) {
    return dot(out.data(), w);
}

/**
 * Analytic vs central-difference gradient of Σ w ⊙ op(inputs) for every
 * input. The weighted sum is driven through mse with the constant target
 * t = out − (n/2)·w, whose gradient with respect to out is exactly w.
 */
void check_gradients(const std::function<Tensor()> &op, std::vector<Tensor *> inputs,
                     std::mt19937_64 &rng, double tol = 1e-5) {
    for (Tensor *in : inputs) in->zero_grad();
    const Tensor out = op();
    const auto w = oracle::random_vector(out.numel(), rng);
    std::vector<double> target = vec(out.data());
    const double half_n = static_cast<double>(out.numel()) / 2.0;
    for (std::size_t i = 0; i < target.size(); ++i) target[i] -= half_n * w[i];
    backward(mse_loss(out, Tensor(out.shape(), target)));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto g = vec(inputs[k]->grad());
        const auto fd = oracle::finite_diff(*inputs[k], [&] { return weighted_sum(op(), w); });
        EXPECT_LT(oracle::max_rel_error(g, fd), tol) << "input " << k;
    }
}

} // namespace

TEST(Linear, IdentityAndBiasPassthrough) {
    const Tensor x({1, 2}, {1, 2});
    const auto y = linear(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}));
    EXPECT_EQ(vec(y.data()), (std::vector<double>{1, 2}));
    const auto z = linear(x, Tensor::zeros({2, 2}), Tensor({2}, {3, 4}));
    EXPECT_EQ(vec(z.data()), (std::vector<double>{3, 4}));
}

TEST(Linear, MatchesTripleLoop) {
    std::mt19937_64 rng(1);
    const auto x = oracle::random_tensor({2, 3}, rng);
    const auto w = oracle::random_tensor({3, 2}, rng);
    const auto b = oracle::random_tensor({2}, rng);
    const auto y = linear(x, w, b);
    const auto ref = oracle::matmul_bias(vec(x.data()), vec(w.data()), vec(b.data()), 2, 3, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
    try {
        linear(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}), Tensor::zeros({2}));
        FAIL();
    } catch (const DimensionError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
    }
}

TEST(Linear, Gradients) {
    std::mt19937_64 rng(2);
    auto x = oracle::random_tensor({3, 4}, rng, true);
    auto w = oracle::random_tensor({4, 5}, rng, true);
    auto b = oracle::random_tensor({5}, rng, true);
    check_gradients([&] { return linear(x, w, b); }, {&x, &w, &b}, rng);
}

TEST(Conv2d, IdentityKernelAndSummation) {
    std::mt19937_64 rng(3);
    const auto x = oracle::random_tensor({1, 1, 3, 3}, rng);
    const auto y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
    EXPECT_EQ(vec(y.data()), vec(x.data()));
    const auto s = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0),
                          Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(s.numel(), 1u);
    EXPECT_EQ(s.item(), 9.0);
}

TEST(Conv2d, MatchesNaiveLoops) {
    std::mt19937_64 rng(4);
    const auto x = oracle::random_tensor({2, 2, 5, 5}, rng);
    const auto k = oracle::random_tensor({3, 2, 3, 3}, rng);
    const auto b = oracle::random_tensor({3}, rng);
    const auto y = conv2d(x, k, b, 2, 1);
    std::size_t oh, ow;
    const auto ref = oracle::conv2d_naive(vec(x.data()), vec(k.data()), vec(b.data()), 2, 2,
                                          5, 5, 3, 3, 3, 2, 1, oh, ow);
    EXPECT_EQ(y.shape(), (Shape{2, 3, oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv2d, NonPositiveExtentRejected) {
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}),
                        Tensor::zeros({1}), 1, 0),
                 DimensionError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}),
                        Tensor::zeros({1}), 1, 1),
                 DimensionError);
}

TEST(Conv2d, Gradients) {
    std::mt19937_64 rng(5);
    auto x = oracle::random_tensor({2, 2, 5, 5}, rng, true);
    auto k = oracle::random_tensor({3, 2, 3, 3}, rng, true);
    auto b = oracle::random_tensor({3}, rng, true);
    check_gradients([&] { return conv2d(x, k, b, 2, 1); }, {&x, &k, &b}, rng);
    check_gradients([&] { return conv2d(x, k, b, 1, 1); }, {&x, &k, &b}, rng);
}

TEST(ConvTranspose2d, IdentityAndBlockUpsampling) {
    std::mt19937_64 rng(6);
    const auto x = oracle::random_tensor({1, 1, 3, 3}, rng);
    const auto y = conv_transpose2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
    EXPECT_EQ(vec(y.data()), vec(x.data()));

    const Tensor small({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto up = conv_transpose2d(small, Tensor::full({1, 1, 2, 2}, 1.0), Tensor::zeros({1}), 2, 0);
    ASSERT_EQ(up.shape(), (Shape{1, 1, 4, 4}));
    const std::vector<double> expect = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(vec(up.data()), expect);
}

TEST(ConvTranspose2d, MatchesScatterOracle) {
    std::mt19937_64 rng(7);
    const auto x = oracle::random_tensor({2, 3, 4, 4}, rng);
    const auto k = oracle::random_tensor({3, 2, 4, 4}, rng);
    const auto b = oracle::random_tensor({2}, rng);
    const auto y = conv_transpose2d(x, k, b, 2, 1);
    std::size_t oh, ow;
    const auto ref = oracle::conv_transpose2d_scatter(vec(x.data()), vec(k.data()), vec(b.data()),
                                                      2, 3, 4, 4, 2, 4, 4, 2, 1, oh, ow);
    EXPECT_EQ(y.shape(), (Shape{2, 2, oh, ow}));
    EXPECT_EQ(oh, 8u);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(ConvTranspose2d, AdjointIdentity) {
    std::mt19937_64 rng(8);
    for (auto [stride, pad] : {std::pair{1, 0}, {2, 1}, {2, 0}, {1, 1}}) {
        const auto x = oracle::random_tensor({2, 3, 8, 8}, rng);
        const auto k = oracle::random_tensor({4, 3, 4, 4}, rng);
        const auto zb4 = Tensor::zeros({4}), zb3 = Tensor::zeros({3});
        const auto cx = conv2d(x, k, zb4, stride, pad);
        const auto y = oracle::random_tensor(cx.shape(), rng);
        const auto ty = conv_transpose2d(y, k, zb3, stride, pad);
        ASSERT_EQ(ty.shape(), x.shape());
        EXPECT_NEAR(dot(cx.data(), y.data()), dot(x.data(), ty.data()), 1e-10)
            << "stride " << stride << " pad " << pad;
    }
}

TEST(ConvTranspose2d, Gradients) {
    std::mt19937_64 rng(9);
    auto x = oracle::random_tensor({2, 3, 3, 3}, rng, true);
    auto k = oracle::random_tensor({3, 2, 4, 4}, rng, true);
    auto b = oracle::random_tensor({2}, rng, true);
    check_gradients([&] { return conv_transpose2d(x, k, b, 2, 1); }, {&x, &k, &b}, rng);
}

TEST(Activation, Values) {
    const auto r = relu(Tensor({2}, {-1, 2}));
    EXPECT_EQ(vec(r.data()), (std::vector<double>{0, 2}));
    EXPECT_EQ(silu(Tensor({1}, {0.0})).item(), 0.0);
}

TEST(Activation, SiluGradientAtOne) {
    Tensor x({1}, {1.0}, true);
    backward(sum(silu(x)));
    const double h = 1e-5;
    auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
    EXPECT_NEAR(x.grad()[0], (f(1.0 + h) - f(1.0 - h)) / (2 * h), 1e-7);
}

TEST(Activation, Gradients) {
    std::mt19937_64 rng(10);
    auto x = oracle::random_tensor({2, 3, 4, 4}, rng, true);
    check_gradients([&] { return silu(x); }, {&x}, rng);
    // Keep relu inputs away from the kink.
    for (double &v : x.mutable_data()) if (std::abs(v) < 1e-3) v = 0.5;
    check_gradients([&] { return relu(x); }, {&x}, rng);
}

TEST(GlobalAvgPool, ValuesAndGradient) {
    EXPECT_EQ(global_avg_pool(Tensor::full({1, 1, 3, 3}, 5.0)).item(), 5.0);
    EXPECT_EQ(global_avg_pool(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})).item(), 2.5);
    std::mt19937_64 rng(11);
    auto x = oracle::random_tensor({2, 3, 4, 5}, rng, true);
    check_gradients([&] { return global_avg_pool(x); }, {&x}, rng, 1e-7);
}

TEST(BroadcastMul, IdentityZeroAndLoopOracle) {
    std::mt19937_64 rng(12);
    const auto x = oracle::random_tensor({2, 3, 4, 4}, rng);
    EXPECT_EQ(vec(broadcast_mul_channelwise(x, Tensor::full({2, 3}, 1.0)).data()), vec(x.data()));
    const auto zeroed = broadcast_mul_channelwise(x, Tensor::zeros({2, 3}));
    for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);
    const auto s = oracle::random_tensor({2, 3}, rng);
    const auto y = broadcast_mul_channelwise(x, s);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < 16; ++p) {
                const std::size_t i = (n * 3 + c) * 16 + p;
                EXPECT_NEAR(y.data()[i], x.data()[i] * s.data()[n * 3 + c], 1e-12);
            }
    EXPECT_THROW(broadcast_mul_channelwise(x, Tensor::zeros({2, 4})), DimensionError);
}

TEST(BroadcastMul, Gradients) {
    std::mt19937_64 rng(13);
    auto x = oracle::random_tensor({2, 3, 4, 4}, rng, true);
    auto s = oracle::random_tensor({2, 3}, rng, true);
    check_gradients([&] { return broadcast_mul_channelwise(x, s); }, {&x, &s}, rng);
    check_gradients([&] { return broadcast_add_channelwise(x, s); }, {&x, &s}, rng);
}

TEST(ConcatAndAdd, Gradients) {
    std::mt19937_64 rng(14);
    auto a = oracle::random_tensor({2, 3, 4, 4}, rng, true);
    auto b = oracle::random_tensor({2, 2, 4, 4}, rng, true);
    auto c = oracle::random_tensor({2, 3, 4, 4}, rng, true);
    check_gradients([&] { return concat_channels(a, b); }, {&a, &b}, rng);
    check_gradients([&] { return add(a, c); }, {&a, &c}, rng);
}

TEST(MseLoss, ValuesAndGradient) {
    const Tensor p({2}, {1, 1});
    EXPECT_EQ(mse_loss(p, p).item(), 0.0);
    EXPECT_EQ(mse_loss(p, Tensor::zeros({2})).item(), 1.0);
    EXPECT_THROW(mse_loss(p, Tensor::zeros({3})), DimensionError);

    std::mt19937_64 rng(15);
    auto x = oracle::random_tensor({3, 4}, rng, true);
    const auto t = oracle::random_tensor({3, 4}, rng);
    backward(mse_loss(x, t));
    const auto g = vec(x.grad());
    const auto fd = oracle::finite_diff(x, [&] { return mse_loss(x, t).item(); });
    EXPECT_LT(oracle::max_rel_error(g, fd), 1e-7);
}

TEST(Backward, SumGivesOnes) {
    Tensor x({2, 3}, std::vector<double>(6, 0.7), true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, MseOfLinearWeightGradient) {
    std::mt19937_64 rng(16);
    const auto x = oracle::random_tensor({4, 3}, rng);
    auto w = oracle::random_tensor({3, 2}, rng, true);
    const auto b = Tensor::zeros({2});
    const auto y = oracle::random_tensor({4, 2}, rng);
    backward(mse_loss(linear(x, w, b), y));
    const auto fd = oracle::finite_diff(w, [&] { return mse_loss(linear(x, w, b), y).item(); });
    EXPECT_LT(oracle::max_rel_error(vec(w.grad()), fd), 1e-6);
}

TEST(Backward, AccumulatesAcrossCalls) {
    std::mt19937_64 rng(17);
    auto w = oracle::random_tensor({3, 2}, rng, true);
    const auto x = oracle::random_tensor({4, 3}, rng);
    const auto loss = sum(silu(linear(x, w, Tensor::zeros({2}))));
    backward(loss);
    const auto once = vec(w.grad());
    backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, SharedSubexpressionSumsPaths) {
    // loss = Σ (h + h) with h = silu(x W); equals Σ(h1 + h2) on duplicated inputs.
    std::mt19937_64 rng(18);
    auto w = oracle::random_tensor({3, 2}, rng, true);
    const auto x = oracle::random_tensor({2, 3}, rng);
    const Tensor zb = Tensor::zeros({2});
    const auto h = silu(linear(x, w, zb));
    backward(sum(add(h, h)));
    const auto shared = vec(w.grad());

    Tensor w1(w.shape(), vec(w.data()), true), w2(w.shape(), vec(w.data()), true);
    backward(sum(add(silu(linear(x, w1, zb)), silu(linear(x, w2, zb)))));
    for (std::size_t i = 0; i < shared.size(); ++i) {
        EXPECT_NEAR(shared[i], w1.grad()[i] + w2.grad()[i], 1e-14);
    }
}

TEST(Backward, NonScalarRejected) {
    Tensor x({2}, {1, 2}, true);
    EXPECT_THROW(backward(x), ContractError);
}

TEST(Primitives, RepeatedEvaluationBitIdentical) {
    std::mt19937_64 rng(19);
    const auto x = oracle::random_tensor({2, 3, 6, 6}, rng);
    const auto k = oracle::random_tensor({4, 3, 3, 3}, rng);
    const auto b = oracle::random_tensor({4}, rng);
    EXPECT_EQ(vec(silu(conv2d(x, k, b, 2, 1)).data()), vec(silu(conv2d(x, k, b, 2, 1)).data()));
}
