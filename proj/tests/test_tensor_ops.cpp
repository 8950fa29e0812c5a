// SPDX-License-Identifier: Apache-2.0
#include "evomoe/errors.hpp"
#include "evomoe/gradcheck.hpp"
#include "evomoe/ops.hpp"
#include "evomoe/rng.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace evomoe;
using evomoe::testing::probe_loss;
using evomoe::testing::random_tensor;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0)
{
    ASSERT_EQ(t.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        EXPECT_NEAR(t.data()[i], expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
    const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    expect_values(matmul(eye, m), {1, 2, 3, 4});
}

TEST(Matmul, ProjectorSelectsFirstRow)
{
    const auto p = Tensor::from({2, 2}, {1, 0, 0, 0});
    const auto m = Tensor::from({2, 2}, {5, 6, 7, 8});
    expect_values(matmul(p, m), {5, 6, 0, 0});
}

TEST(Matmul, GradientMatchesFiniteDifferences)
{
    Rng rng(1, 0);
    auto a = random_tensor(rng, {3, 4});
    const auto b = random_tensor(rng, {4, 2});
    const double err = finite_diff_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a);
    EXPECT_LT(err, 1e-6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes)
{
    const auto a = Tensor::zeros({2, 3});
    const auto b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x2]"), std::string::npos);
    }
}

TEST(LayerNorm, ConstantRowMapsToZero)
{
    const auto x = Tensor::from({1, 4}, {5, 5, 5, 5});
    const auto y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    expect_values(y, {0, 0, 0, 0});
}

TEST(LayerNorm, SymmetricPairIsUnitVariance)
{
    const auto x = Tensor::from({1, 2}, {1, -1});
    const auto y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}));
    expect_values(y, {1, -1}, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences)
{
    Rng rng(2, 0);
    auto x = random_tensor(rng, {1, 6});
    const auto g = random_tensor(rng, {6});
    const auto b = random_tensor(rng, {6});
    const double err =
        finite_diff_check([&](const Tensor& t) { return probe_loss(layer_norm(t, g, b)); }, x);
    EXPECT_LT(err, 1e-5);
}

TEST(LayerNorm, WidthMismatchIsDimensionError)
{
    EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({4}), Tensor::zeros({4})),
                 DimensionError);
}

TEST(LayerNorm, NormalisedRowsHaveZeroMeanUnitVariance)
{
    Rng rng(3, 0);
    for (int draw = 0; draw < 20; ++draw) {
        // Row variance far above eps, so the eps shift stays below 1e-6.
        const auto x = random_tensor(rng, {4, 16}, 20.0);
        const auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
        for (std::size_t r = 0; r < 4; ++r) {
            double m = 0.0, v = 0.0;
            for (std::size_t j = 0; j < 16; ++j)
                m += y.data()[r * 16 + j];
            m /= 16.0;
            for (std::size_t j = 0; j < 16; ++j)
                v += (y.data()[r * 16 + j] - m) * (y.data()[r * 16 + j] - m);
            v /= 16.0;
            EXPECT_LT(std::abs(m), 1e-10);
            EXPECT_NEAR(v, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, UniformInput)
{
    expect_values(softmax(Tensor::zeros({1, 4})), {0.25, 0.25, 0.25, 0.25});
}

TEST(Softmax, LargeLogitDoesNotOverflow)
{
    const auto y = softmax(Tensor::from({1, 2}, {1000, 0}));
    EXPECT_TRUE(std::isfinite(y.data()[0]));
    EXPECT_NEAR(y.data()[0], 1.0, 1e-300);
    EXPECT_NEAR(y.data()[1], 0.0, 1e-300);
}

TEST(Softmax, MatchesHighPrecisionEvaluator)
{
    const std::vector<double> row{0.1, 0.7, 0.2, 0.0};
    const auto y = softmax(Tensor::from({1, 4}, row));
    expect_values(y, evomoe::testing::softmax_oracle(row), 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant)
{
    Rng rng(4, 0);
    for (int draw = 0; draw < 20; ++draw) {
        const auto x = random_tensor(rng, {3, 7}, 5.0);
        const double c = rng.normal(0.0, 50.0);
        std::vector<double> shifted(x.data().begin(), x.data().end());
        for (double& v : shifted)
            v += c;
        const auto y = softmax(x);
        const auto ys = softmax(Tensor::from({3, 7}, shifted));
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                s += y.data()[r * 7 + j];
                EXPECT_NEAR(y.data()[r * 7 + j], ys.data()[r * 7 + j], 1e-12);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Swiglu, ZeroGateGivesZero)
{
    const auto y = swiglu(Tensor::from({1, 4}, {0, 0, 3.5, -7}));
    expect_values(y, {0, 0});
}

TEST(Swiglu, LargeGateActsAsIdentityOnGate)
{
    // silu(10) = 10 * sigmoid(10) is within 5e-4 of 10, so the product tends to g * v.
    const auto y = swiglu(Tensor::from({1, 2}, {10, 2}));
    EXPECT_NEAR(y.item(), 20.0, 1e-3);
}

TEST(Swiglu, OddWidthIsDimensionError)
{
    EXPECT_THROW(swiglu(Tensor::zeros({2, 3})), DimensionError);
}

TEST(Swiglu, GradientMatchesFiniteDifferences)
{
    Rng rng(5, 0);
    auto x = random_tensor(rng, {3, 8});
    const double err = finite_diff_check([](const Tensor& t) { return probe_loss(swiglu(t)); }, x);
    EXPECT_LT(err, 1e-5);
}

TEST(Backward, SumGivesOnes)
{
    auto x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 7, -1}, true);
    backward(sum(x));
    for (double g : x.grad())
        EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput)
{
    auto x = Tensor::from({4}, {1.5, -2, 0.25, 3}, true);
    backward(scale(sum(mul(x, x)), 0.5));
    const auto g = x.grad();
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(g[i], x.data()[i]);
}

TEST(Backward, RepeatedCallsAccumulate)
{
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(x));
    backward(sum(x));
    for (double g : x.grad())
        EXPECT_EQ(g, 2.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarLossIsContractError)
{
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, CompositeMlpMatchesFiniteDifferences)
{
    Rng rng(6, 0);
    auto w1 = random_tensor(rng, {5, 8}, 0.5);
    const auto b1 = random_tensor(rng, {8}, 0.1);
    const auto w2 = random_tensor(rng, {4, 3}, 0.5);
    const auto input = random_tensor(rng, {6, 5});
    const std::vector<int> targets{0, 2, 1, -1, 2, 0};
    auto loss = [&](const Tensor& w) {
        const auto h = swiglu(add_bias(matmul(input, w), b1));
        return cross_entropy(matmul(h, w2), targets);
    };
    EXPECT_LT(finite_diff_check(loss, w1), 1e-4);
}

TEST(FiniteDiff, SumIsExact)
{
    Rng rng(7, 0);
    auto x = random_tensor(rng, {3, 3});
    EXPECT_LT(finite_diff_check([](const Tensor& t) { return sum(t); }, x), 1e-10);
}

TEST(FiniteDiff, HalfSquaredNormIsTight)
{
    Rng rng(8, 0);
    auto x = random_tensor(rng, {10});
    EXPECT_LT(finite_diff_check([](const Tensor& t) { return scale(sum(mul(t, t)), 0.5); }, x),
              1e-7);
}

TEST(FiniteDiff, FlagsAWrongGradient)
{
    // Value Σ t³, but the weights t² enter as constants, so backward gives t²
    // instead of 3t².
    Rng rng(12, 0);
    auto x = random_tensor(rng, {6});
    const double err = finite_diff_check(
        [](const Tensor& t) {
            std::vector<double> w(t.data().begin(), t.data().end());
            for (double& v : w)
                v *= v;
            return dot_const(t, w);
        },
        x);
    EXPECT_NEAR(err, 2.0 / 3.0, 1e-6);
}

TEST(FiniteDiff, RestoresInput)
{
    Rng rng(9, 0);
    auto x = random_tensor(rng, {5});
    const auto before = x.clone();
    finite_diff_check([](const Tensor& t) { return sum(mul(t, t)); }, x);
    EXPECT_TRUE(bitwise_equal(x, before));
    EXPECT_FALSE(x.requires_grad());
}

// Property: every differentiable op passes the finite-difference gate on
// randomized small shapes.
TEST(GradientSoundness, EveryOpOnRandomShapes)
{
    Rng rng(10, 0);
    for (int draw = 0; draw < 20; ++draw) {
        const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(5), n = 1 + rng.below(4);
        SCOPED_TRACE("draw " + std::to_string(draw));
        auto a = random_tensor(rng, {m, k});
        const auto b = random_tensor(rng, {k, n});
        const auto bt = random_tensor(rng, {n, k});
        const auto bias = random_tensor(rng, {k});
        const auto gain = random_tensor(rng, {k});
        const auto other = random_tensor(rng, {m, k});
        const auto row_scale = random_tensor(rng, {m});

        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(matmul(t, b)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(matmul_nt(t, bt)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(mul(t, other)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(add_bias(t, bias)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(softmax(t)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(layer_norm(t, gain, bias)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(scale_rows(t, row_scale)); }, a), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(column_mean(t)); }, a), 1e-4);
        auto s = row_scale.clone();
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(scale_rows(other, t)); }, s), 1e-4);

        auto wide = random_tensor(rng, {m, 2 * k});
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(swiglu(t)); }, wide), 1e-4);

        std::vector<int> targets(m);
        for (auto& t : targets)
            t = static_cast<int>(rng.below(k));
        targets[0] = -1;
        if (m > 1) {
            EXPECT_LT(finite_diff_check([&](const Tensor& t) { return cross_entropy(t, targets); }, a), 1e-4);
        }

        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < m + 1; ++i)
            rows.push_back(rng.below(m));
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(index_select_rows(t, rows)); }, a), 1e-4);
        auto src = random_tensor(rng, {rows.size(), k});
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(index_add_rows(other, t, rows)); }, src), 1e-4);

        const std::size_t e = 2 + rng.below(3);
        // With k = 1 the gate is identically 1 and has no gradient to check.
        const std::size_t top = 2 + rng.below(e - 1);
        // Positive weights fed directly, so unselected columns have an exactly zero gradient.
        std::vector<double> weights(m * e);
        for (double& w : weights)
            w = rng.uniform(0.1, 1.0);
        auto probs_raw = Tensor::from({m, e}, weights);
        std::vector<int> sel;
        for (std::size_t t = 0; t < m; ++t) {
            const auto perm = rng.permutation(e);
            for (std::size_t j = 0; j < top; ++j)
                sel.push_back(static_cast<int>(perm[j]));
        }
        EXPECT_LT(finite_diff_check([&](const Tensor& t) {
                      return probe_loss(select_renormalize(t, sel, top));
                  }, probs_raw), 1e-4);
    }
}

TEST(GradientSoundness, AttentionAndBottleneck)
{
    Rng rng(11, 0);
    for (int draw = 0; draw < 20; ++draw) {
        SCOPED_TRACE("draw " + std::to_string(draw));
        const std::size_t batch = 1 + rng.below(2), seq = 1 + rng.below(4), heads = 1 + rng.below(2);
        const std::size_t c = heads * (1 + rng.below(3));
        auto qkv = random_tensor(rng, {batch * seq, 3 * c});
        EXPECT_LT(finite_diff_check([&](const Tensor& t) {
                      return probe_loss(causal_self_attention(t, batch, seq, heads));
                  }, qkv), 1e-4);

        const std::size_t rank = 2 * (1 + rng.below(2));
        auto x = random_tensor(rng, {3, c});
        auto theta = random_tensor(rng, {3, 2 * c * rank}, 0.7);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(dtr_bottleneck(t, theta, rank)); }, x), 1e-4);
        EXPECT_LT(finite_diff_check([&](const Tensor& t) { return probe_loss(dtr_bottleneck(x, t, rank)); }, theta), 1e-4);
    }
}

TEST(SelectRenormalize, SingleChoiceGateIsConstantOne)
{
    auto logits = Tensor::from({2, 3}, {0.3, -1.0, 2.0, 0.0, 0.5, 0.1}, true);
    const std::vector<int> sel{2, 1};
    const auto gates = select_renormalize(softmax(logits), sel, 1);
    expect_values(gates, {1.0, 1.0});
    backward(sum(gates));
    for (double g : logits.grad())
        EXPECT_EQ(g, 0.0);
}

TEST(SelectRenormalize, PairSumsToOne)
{
    const auto probs = Tensor::from({1, 4}, {0.1, 0.2, 0.3, 0.4});
    const std::vector<int> sel{3, 1};
    expect_values(select_renormalize(probs, sel, 2), {0.4 / 0.6, 0.2 / 0.6}, 1e-15);
}

TEST(CrossEntropy, MatchesLogSumExpOracle)
{
    const std::vector<double> row0{0.5, -1.0, 2.0}, row1{3.0, 0.0, 0.25};
    std::vector<double> all(row0);
    all.insert(all.end(), row1.begin(), row1.end());
    const std::vector<int> targets{2, 0};
    const double expected = 0.5 * ((evomoe::testing::log_sum_exp_oracle(row0.data(), 3) - 2.0) +
                                   (evomoe::testing::log_sum_exp_oracle(row1.data(), 3) - 3.0));
    EXPECT_NEAR(cross_entropy(Tensor::from({2, 3}, all), targets).item(), expected, 1e-14);
}

TEST(CrossEntropy, AllExcludedIsContractError)
{
    const std::vector<int> targets{-1, -1};
    EXPECT_THROW(cross_entropy(Tensor::zeros({2, 3}), targets), ContractError);
}

TEST(Embedding, OutOfRangeIdIsContractError)
{
    const std::vector<int> ids{0, 5};
    EXPECT_THROW(embedding(Tensor::zeros({4, 2}), ids), ContractError);
}

TEST(Determinism, SameSeedSameBits)
{
    auto run = [] {
        Rng rng(12, 3);
        const auto a = random_tensor(rng, {6, 5});
        const auto b = random_tensor(rng, {5, 4});
        return softmax(layer_norm(matmul(a, b), Tensor::full({4}, 1.0), Tensor::zeros({4})));
    };
    EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(Rng, SameSeedAndStreamReproduce)
{
    Rng a(42, 5), b(42, 5);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DistinctStreamsDiffer)
{
    Rng a(42, 5), b(42, 6);
    std::set<std::uint64_t> seen;
    int equal = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.next_u64(), y = b.next_u64();
        equal += x == y;
    }
    EXPECT_EQ(equal, 0);
}

TEST(Rng, UniformAndNormalMoments)
{
    Rng rng(42, 1);
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform(0.7, 0.79);
        ASSERT_GE(u, 0.7);
        ASSERT_LE(u, 0.79);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    EXPECT_NEAR(su / n, 0.745, 1e-3);
    EXPECT_NEAR(sn / n, 0.0, 1e-2);
    EXPECT_NEAR(sn2 / n, 1.0, 1e-2);
}

TEST(Rng, PermutationIsBijection)
{
    Rng rng(1, 1);
    for (int i = 0; i < 50; ++i) {
        auto p = rng.permutation(7);
        std::set<std::size_t> s(p.begin(), p.end());
        EXPECT_EQ(s.size(), 7u);
        EXPECT_EQ(*s.rbegin(), 6u);
    }
}

TEST(Rng, CounterRestoreResumesSequence)
{
    Rng a(3, 9);
    for (int i = 0; i < 10; ++i)
        a.next_u64();
    Rng b(3, 9);
    b.set_counter(a.counter());
    EXPECT_EQ(a.next_u64(), b.next_u64());
}
