// SPDX-License-Identifier: Apache-2.0
#include "evomoe/data.hpp"
#include "evomoe/errors.hpp"
#include "evomoe/gradcheck.hpp"
#include "evomoe/model.hpp"
#include "evomoe/ops.hpp"
#include "evomoe/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace evomoe;
using evomoe::testing::random_tensor;
using evomoe::testing::tiny_config;

namespace {

using Row = std::vector<long double>;

Row ln_oracle(const Row& x)
{
    long double mean = 0, var = 0;
    for (auto v : x)
        mean += v;
    mean /= x.size();
    for (auto v : x)
        var += (v - mean) * (v - mean);
    var /= x.size();
    Row y;
    for (auto v : x)
        y.push_back((v - mean) / std::sqrt(var + static_cast<long double>(kLayerNormEps)));
    return y;
}

// y = W^T x + b for a row-major [in x out] matrix.
Row affine_oracle(const Row& x, const Tensor& w, const Tensor& b)
{
    const std::size_t in = w.dim(0), out = w.dim(1);
    Row y(out);
    for (std::size_t j = 0; j < out; ++j) {
        long double s = b.data()[j];
        for (std::size_t i = 0; i < in; ++i)
            s += x[i] * w.data()[i * out + j];
        y[j] = s;
    }
    return y;
}

Row ffn_oracle(const Row& x, const Ffn& f)
{
    const auto u = affine_oracle(x, f.w_in, f.b_in);
    const std::size_t h = u.size() / 2;
    Row a(h);
    for (std::size_t j = 0; j < h; ++j)
        a[j] = u[j] / (1 + std::exp(-u[j])) * u[h + j];
    return affine_oracle(a, f.w_out, f.b_out);
}

Ffn random_ffn(Rng& rng, std::size_t c, std::size_t h, double s = 0.5)
{
    return {random_tensor(rng, {c, 2 * h}, s), random_tensor(rng, {2 * h}, s), random_tensor(rng, {h, c}, s),
            random_tensor(rng, {c}, s)};
}

Model random_model(const ModelConfig& c, std::uint64_t seed)
{
    auto m = init_dense_model(c, seed);
    evomoe::testing::randomize_parameters(m, seed, 0.3);
    return m;
}

TrainState sparse_state(RunConfig cfg)
{
    auto s = start_training(cfg);
    evomoe::testing::randomize_parameters(s.model, 5, 0.3);
    transition_to_moe(s);
    return s;
}

}  // namespace

TEST(Ffn, ZeroWeightsGiveZeroOutput)
{
    const Ffn f{Tensor::zeros({4, 6}), Tensor::zeros({6}), Tensor::zeros({3, 4}), Tensor::zeros({4})};
    Rng rng(1, 0);
    const auto y = ffn_expert_forward(random_tensor(rng, {5, 4}), f);
    for (double v : y.data())
        EXPECT_EQ(v, 0.0);
}

TEST(Ffn, TinyCaseMatchesHandArithmetic)
{
    // C = 2, hidden = 1: gate column 0, value column 1.
    const Ffn f{Tensor::from({2, 2}, {1.0, 2.0, -1.0, 0.5}), Tensor::from({2}, {0.1, -0.2}),
                Tensor::from({1, 2}, {3.0, -1.0}), Tensor::from({2}, {0.0, 0.25})};
    const auto y = ffn_expert_forward(Tensor::from({1, 2}, {0.5, 1.5}), f);
    const double g = 0.5 * 1.0 + 1.5 * -1.0 + 0.1;  // -0.9
    const double v = 0.5 * 2.0 + 1.5 * 0.5 - 0.2;   // 1.55
    const double a = g / (1.0 + std::exp(-g)) * v;
    EXPECT_NEAR(y.data()[0], 3.0 * a, 1e-14);
    EXPECT_NEAR(y.data()[1], -a + 0.25, 1e-14);
}

TEST(Ffn, IdenticalParametersGiveIdenticalOutputs)
{
    Rng rng(2, 0);
    const auto f = random_ffn(rng, 6, 5);
    const auto x = random_tensor(rng, {4, 6});
    EXPECT_TRUE(bitwise_equal(ffn_expert_forward(x, f), ffn_expert_forward(x, clone_ffn(f))));
}

TEST(Attention, SingleTokenIsValuePathPlusResidual)
{
    auto c = tiny_config().model;
    const auto m = random_model(c, 3);
    const auto& b = m.blocks[0];
    Rng rng(3, 1);
    const auto z = random_tensor(rng, {1, c.d_model});
    const auto out = attention_block(z, b, 1, 1, c.n_heads);

    Row zr(z.data().begin(), z.data().end());
    auto h = ln_oracle(zr);
    const auto g = b.ln1_g.data();
    const auto bb = b.ln1_b.data();
    for (std::size_t i = 0; i < h.size(); ++i)
        h[i] = h[i] * g[i] + bb[i];
    const auto qkv = affine_oracle(h, b.w_qkv, b.b_qkv);
    const Row v(qkv.begin() + 2 * c.d_model, qkv.end());
    const auto o = affine_oracle(v, b.w_o, b.b_o);
    for (std::size_t i = 0; i < c.d_model; ++i)
        EXPECT_NEAR(out.data()[i], static_cast<double>(zr[i] + o[i]), 1e-12);
}

TEST(Attention, GradientMatchesFiniteDifferences)
{
    ModelConfig c = tiny_config().model;
    c.d_model = 8;
    const auto m = random_model(c, 4);
    Rng rng(4, 1);
    auto z = random_tensor(rng, {2 * 3, 8});
    const double err = finite_diff_check(
        [&](const Tensor& x) { return mean(attention_block(x, m.blocks[0], 2, 3, c.n_heads)); }, z);
    EXPECT_LT(err, 1e-4);
}

TEST(Attention, PerturbationOnlyReachesLaterPositions)
{
    auto c = tiny_config().model;
    const auto m = random_model(c, 6);
    Rng rng(6, 1);
    const std::size_t s = 6;
    for (int draw = 0; draw < 20; ++draw) {
        auto z = random_tensor(rng, {s, c.d_model});
        const auto base = attention_block(z, m.blocks[1], 1, s, c.n_heads);
        const std::size_t j = rng.below(s);
        auto z2 = z.clone();
        z2.data()[j * c.d_model + rng.below(c.d_model)] += 0.5;
        const auto pert = attention_block(z2, m.blocks[1], 1, s, c.n_heads);
        for (std::size_t t = 0; t < s; ++t) {
            bool same = true;
            for (std::size_t i = 0; i < c.d_model; ++i)
                same = same && base.data()[t * c.d_model + i] == pert.data()[t * c.d_model + i];
            EXPECT_EQ(same, t < j) << "draw " << draw << " position " << t << " perturbed " << j;
        }
    }
}

TEST(ModelForward, CausalLogitsProperty)
{
    auto cfg = tiny_config();
    const auto state = sparse_state(cfg);
    Rng rng(7, 0);
    for (int draw = 0; draw < 20; ++draw) {
        auto batch = generate_batch(cfg.task, 7, 1, static_cast<std::uint64_t>(draw), 2);
        const auto base = model_forward(state.model, batch).logits;
        const std::size_t s = batch.seq, v = cfg.model.vocab_size;
        const std::size_t j = rng.below(s);
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t t = j; t < s; ++t)
                batch.tokens[b * s + t] = static_cast<int>(rng.below(v));
        const auto pert = model_forward(state.model, batch).logits;
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t t = 0; t < j; ++t)
                for (std::size_t i = 0; i < v; ++i) {
                    const std::size_t at = (b * s + t) * v + i;
                    ASSERT_EQ(base.data()[at], pert.data()[at]) << "draw " << draw;
                }
    }
}

TEST(ModelForward, ShapeAndDeterminism)
{
    auto cfg = tiny_config();
    const auto state = sparse_state(cfg);
    const auto batch = generate_batch(cfg.task, 1, 2, 3, 3);
    const auto a = model_forward(state.model, batch);
    const auto b = model_forward(state.model, batch);
    EXPECT_EQ(a.logits.shape(), (Shape{3, 8, 16}));
    EXPECT_TRUE(bitwise_equal(a.logits, b.logits));
}

TEST(ModelForward, SequenceOverflowIsAContractError)
{
    auto cfg = tiny_config();
    const auto m = init_dense_model(cfg.model, 1);
    TokenBatch b;
    b.batch = 1;
    b.seq = cfg.model.max_seq_len + 1;
    b.tokens.assign(b.seq, 0);
    b.modality.assign(b.seq, Modality::visual);
    b.targets.assign(b.seq, -1);
    EXPECT_THROW(model_forward(m, b), ContractError);
}

TEST(ModelForward, PlacementDeterminesOutcomeCount)
{
    for (auto placement : {Placement::alternating, Placement::all, Placement::none})
        for (bool skip : {false, true})
            for (std::size_t layers : {1u, 2u, 3u}) {
                auto cfg = tiny_config();
                cfg.model.n_layers = layers;
                cfg.model.moe_placement = placement;
                cfg.model.skip_first_moe_layer = skip;
                auto s = start_training(cfg);
                transition_to_moe(s);
                const auto batch = generate_batch(cfg.task, 1, 2, 0, 2);
                EXPECT_EQ(model_forward(s.model, batch).outcomes.size(), cfg.model.moe_layers().size());
            }
}

TEST(ModelForward, SingleExpertEverywhereEqualsDense)
{
    auto cfg = tiny_config();
    cfg.model.n_experts = 1;
    cfg.model.beta_ranges.clear();
    cfg.model.moe_placement = Placement::all;
    auto s = start_training(cfg);
    evomoe::testing::randomize_parameters(s.model, 8, 0.3);
    const auto dense = clone_model(s.model);
    transition_to_moe(s);
    const auto batch = generate_batch(cfg.task, 8, 2, 0, 3);
    EXPECT_TRUE(bitwise_equal(model_forward(dense, batch).logits, model_forward(s.model, batch).logits));
}

TEST(ModelForward, ReplicatedExpertsIgnoreAssignmentPermutations)
{
    auto cfg = tiny_config();
    cfg.model.moe_placement = Placement::all;
    const auto state = sparse_state(cfg);
    const auto batch = generate_batch(cfg.task, 9, 2, 0, 3);
    const auto base = model_forward(state.model, batch).logits;
    Rng rng(9, 3);
    for (int draw = 0; draw < 20; ++draw) {
        std::vector<std::vector<std::size_t>> perms{rng.permutation(4), rng.permutation(4)};
        ForwardOptions o;
        o.permutations = &perms;
        EXPECT_TRUE(bitwise_equal(base, model_forward(state.model, batch, o).logits)) << "draw " << draw;
    }
}

TEST(MoeLayer, TopTwoMatchesCombinationOracle)
{
    // One token, two experts, C = 4, hidden = 3.
    Rng rng(10, 0);
    Block b;
    b.ln2_g = Tensor::full({4}, 1.0);
    b.ln2_b = Tensor::zeros({4});
    ExpertBank bank;
    bank.experts = {random_ffn(rng, 4, 3), random_ffn(rng, 4, 3)};
    bank.trainable = {true, false};
    b.moe = bank;
    const auto z = Tensor::from({1, 4}, {0.3, -1.2, 0.8, 2.0});
    const auto w = Tensor::from({4, 2}, {0.5, -0.2, 0.1, 0.3, -0.4, 0.6, 0.2, 0.0});
    const auto x = layer_norm(z, b.ln2_g, b.ln2_b);
    const auto routing = linear_route(x, w, 2);
    const auto out = moe_layer_forward(z, b, routing);

    Row zr(z.data().begin(), z.data().end());
    const auto xr = ln_oracle(zr);
    const auto logit = affine_oracle(xr, w, Tensor::zeros({2}));
    const long double p0 = 1 / (1 + std::exp(logit[1] - logit[0]));
    const auto f0 = ffn_oracle(xr, bank.experts[0]);
    const auto f1 = ffn_oracle(xr, bank.experts[1]);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(out.data()[i], static_cast<double>(p0 * f0[i] + (1 - p0) * f1[i] + zr[i]), 1e-12);
}

TEST(MoeLayer, TopOneGateIsExactlyOne)
{
    Rng rng(11, 0);
    for (int draw = 0; draw < 20; ++draw) {
        const auto r = linear_route(random_tensor(rng, {7, 5}), random_tensor(rng, {5, 4}), 1);
        for (double g : r.gates.data())
            EXPECT_EQ(g, 1.0);
    }
}

TEST(MoeLayer, OutOfRangeExpertIsAContractError)
{
    Rng rng(12, 0);
    Block b;
    b.ln2_g = Tensor::full({4}, 1.0);
    b.ln2_b = Tensor::zeros({4});
    ExpertBank bank;
    bank.experts = {random_ffn(rng, 4, 3), random_ffn(rng, 4, 3)};
    b.moe = bank;
    // Three router columns for a two-expert bank; column 2 wins.
    const auto routing = finish_routing(Tensor::from({1, 3}, {0.0, 0.1, 5.0}), 1, {Modality::text});
    EXPECT_THROW(moe_layer_forward(Tensor::zeros({1, 4}), b, routing), ContractError);

    Block dense;
    EXPECT_THROW(moe_layer_forward(Tensor::zeros({1, 4}), dense, routing), ContractError);
}

TEST(Parameters, NamesAreUniqueAndKindsTagged)
{
    const auto state = sparse_state(tiny_config());
    const auto params = parameters(state.model);
    std::set<std::string> names;
    std::size_t router = 0, expert = 0;
    for (const auto& p : params) {
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
        router += p.kind == ParamKind::router;
        expert += p.kind == ParamKind::expert;
    }
    // One MoE layer: 4 experts x 4 arrays, two hypernetworks x 4 arrays + phi.
    EXPECT_EQ(expert, 16u);
    EXPECT_EQ(router, 10u);
}
