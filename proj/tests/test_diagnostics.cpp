// SPDX-License-Identifier: Apache-2.0
#include "evomoe/checkpoint.hpp"
#include "evomoe/diagnostics.hpp"
#include "evomoe/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace evomoe;
using evomoe::testing::tiny_config;

namespace {

TrainState replicated_state(RouterKind kind = RouterKind::dtr)
{
    auto s = start_training(tiny_config(kind));
    run_stage(s);
    transition_to_moe(s);
    return s;
}

TrainState trained_state(RouterKind kind = RouterKind::dtr)
{
    auto s = replicated_state(kind);
    run_stage(s);
    begin_router_stage(s);
    run_stage(s);
    return s;
}

std::string first_line(const std::string& path)
{
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    return line;
}

}  // namespace

TEST(ShuffleProbe, ReplicatedExpertsAreInsensitive)
{
    const auto s = replicated_state();
    const auto r = shuffle_probe(s, 5, 3);
    ASSERT_EQ(r.delta.size(), 5u);
    for (double d : r.delta)
        EXPECT_LE(std::abs(d), 1e-10);
}

TEST(ShuffleProbe, IdentityPermutationChangesNothing)
{
    const auto s = trained_state();
    const auto r = shuffle_probe(s, 3, 9, true);
    for (std::size_t i = 0; i < r.delta.size(); ++i) {
        EXPECT_EQ(r.delta[i], 0.0);
        EXPECT_EQ(r.trial_ce[i], r.baseline_ce);
    }
    EXPECT_EQ(r.baseline_ce, evaluate(s));
}

TEST(ShuffleProbe, ReproducibleAndConsistent)
{
    const auto s = trained_state();
    const auto a = shuffle_probe(s, 4, 11);
    const auto b = shuffle_probe(s, 4, 11);
    EXPECT_EQ(a.trial_ce, b.trial_ce);
    EXPECT_EQ(a.seed, 11u);
    ASSERT_EQ(a.delta.size(), 4u);
    double m = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.delta[i], a.trial_ce[i] - a.baseline_ce);
        m += std::abs(a.delta[i]);
    }
    EXPECT_NEAR(a.mean_abs_delta(), m / 4, 1e-15);
    EXPECT_THROW(shuffle_probe(s, 0, 1), ContractError);
}

TEST(ModalityDistribution, ColumnsSumToOneProperty)
{
    for (auto kind : {RouterKind::dtr, RouterKind::linear}) {
        const auto d = modality_distribution(trained_state(kind));
        ASSERT_EQ(d.layers.size(), d.fractions.size());
        for (std::size_t l = 0; l < d.layers.size(); ++l) {
            double v = 0.0, t = 0.0, tv = 0.0;
            for (const auto& row : d.fractions[l]) {
                v += row[0];
                t += row[1];
                tv += std::abs(row[0] - row[1]);
            }
            EXPECT_NEAR(v, 1.0, 1e-12);
            EXPECT_NEAR(t, 1.0, 1e-12);
            EXPECT_NEAR(d.tv_distance[l], 0.5 * tv, 1e-12);
        }
    }
}

TEST(ModalityDistribution, ConstantRouterSendsEverythingToExpertZero)
{
    // Zero router weights tie every logit; ties go to the lowest index.
    auto s = replicated_state(RouterKind::linear);
    for (auto p : parameters(s.model))
        if (p.kind == ParamKind::router)
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    const auto d = modality_distribution(s);
    for (const auto& layer : d.fractions) {
        EXPECT_EQ(layer[0][0], 1.0);
        EXPECT_EQ(layer[0][1], 1.0);
    }
    EXPECT_EQ(d.tv_distance[0], 0.0);
}

TEST(LogitKde, SplitsTokensByModality)
{
    const auto s = trained_state();
    const auto layer = last_moe_layer(s.model);
    const auto samples = router_max_logits(s, layer);
    const auto& cfg = s.config;
    const std::size_t per_seq_v = cfg.task.prefix_len, per_seq_t = cfg.task.suffix_len;
    EXPECT_EQ(samples.visual.size(), cfg.eval_batches * cfg.eval_batch_size * per_seq_v);
    EXPECT_EQ(samples.text.size(), cfg.eval_batches * cfg.eval_batch_size * per_seq_t);
    const auto r = logit_kde(s, layer);
    EXPECT_EQ(r.n_visual, samples.visual.size());
    EXPECT_EQ(r.n_text, samples.text.size());
    EXPECT_EQ(r.layer, layer);
    EXPECT_THROW(logit_kde(s, 1), ContractError);
}

TEST(Probes, DenseModelIsAContractError)
{
    auto s = start_training(tiny_config());
    EXPECT_THROW(shuffle_probe(s, 1, 1), ContractError);
    EXPECT_THROW(modality_distribution(s), ContractError);
    EXPECT_THROW(logit_kde(s, 0), ContractError);
    EXPECT_THROW(last_moe_layer(s.model), ContractError);
}

TEST(Probes, LeaveTheStateUntouched)
{
    const auto s = trained_state();
    const auto before = serialize(s);
    shuffle_probe(s, 3, 1);
    logit_kde(s, last_moe_layer(s.model));
    modality_distribution(s);
    EXPECT_EQ(serialize(s), before);
}

TEST(Artifacts, CsvHeadersAndSidecar)
{
    const auto dir = std::filesystem::temp_directory_path() / "evomoe_diag_test";
    std::filesystem::create_directories(dir);
    const auto s = trained_state();
    const auto p = [&](const char* f) { return (dir / f).string(); };
    write_shuffle_csv(p("shuffle.csv"), shuffle_probe(s, 2, 1));
    write_kde_csv(p("kde.csv"), logit_kde(s, last_moe_layer(s.model)));
    write_modal_dist_csv(p("dist.csv"), modality_distribution(s));
    EXPECT_EQ(first_line(p("shuffle.csv")), "trial,ce,delta");
    EXPECT_EQ(first_line(p("kde.csv")), "grid,density_V,density_T");
    EXPECT_EQ(first_line(p("dist.csv")), "layer,expert,frac_V,frac_T");
    write_sidecar(p("shuffle.csv"), s.config, 1);
    EXPECT_TRUE(std::filesystem::exists(p("shuffle.csv.meta.json")));
    std::filesystem::remove_all(dir);
}

TEST(Artifacts, RealsCarrySeventeenDigits)
{
    const double x = 0.1 + 0.2;
    EXPECT_EQ(std::stod(format_real(x)), x);
    EXPECT_EQ(std::stod(format_real(-1.0 / 3.0)), -1.0 / 3.0);
}
