// SPDX-License-Identifier: Apache-2.0
#include "evomoe/diagnostics.hpp"

#include "evomoe/checkpoint.hpp"
#include "evomoe/data.hpp"
#include "evomoe/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace evomoe {

using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 1000;

void require_sparse(const Model& m, const char* probe)
{
    if (!m.is_moe())
        throw ContractError(std::string(probe) + " needs a checkpoint with MoE layers; this one is dense");
}

std::size_t moe_slot(const Model& m, std::size_t layer)
{
    const auto layers = m.moe_layer_indices();
    const auto it = std::find(layers.begin(), layers.end(), layer);
    if (it == layers.end())
        throw ContractError("layer " + std::to_string(layer) + " is not an MoE layer");
    return static_cast<std::size_t>(it - layers.begin());
}

// Routing outcomes of every held-out batch, in batch order.
std::vector<std::vector<RoutingOutcome>> eval_routing(const TrainState& state)
{
    const auto model = frozen_copy(state.model);
    const auto opts = stage_forward(state.config, state.stage);
    std::vector<std::vector<RoutingOutcome>> out;
    for (const auto& b : eval_batches(state.config))
        out.push_back(model_forward(model, b, opts).outcomes);
    return out;
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw FormatError("cannot write '" + path + "'");
    return out;
}

}  // namespace

double ShuffleReport::mean_abs_delta() const
{
    if (delta.empty())
        return 0.0;
    double s = 0.0;
    for (double d : delta)
        s += std::abs(d);
    return s / static_cast<double>(delta.size());
}

ShuffleReport shuffle_probe(const TrainState& state, std::size_t n_trials, std::uint64_t seed, bool identity)
{
    require_sparse(state.model, "shuffle probe");
    if (n_trials < 1)
        throw ContractError("shuffle probe needs at least one trial");
    const auto model = frozen_copy(state.model);
    const auto n_layers = model.moe_layer_indices().size();
    const std::size_t e = state.config.model.n_experts;

    ShuffleReport r;
    r.seed = seed;
    auto opts = stage_forward(state.config, state.stage);
    r.baseline_ce = evaluate(model, state.config, opts);
    for (std::size_t t = 0; t < n_trials; ++t) {
        Rng rng(seed, kShuffleStream + t);
        std::vector<std::vector<std::size_t>> perms;
        for (std::size_t l = 0; l < n_layers; ++l) {
            if (identity) {
                std::vector<std::size_t> p(e);
                for (std::size_t i = 0; i < e; ++i)
                    p[i] = i;
                perms.push_back(std::move(p));
            } else {
                auto layer_rng = rng.split(l);
                perms.push_back(layer_rng.permutation(e));
            }
        }
        opts.permutations = &perms;
        const double ce = evaluate(model, state.config, opts);
        r.trial_ce.push_back(ce);
        r.delta.push_back(ce - r.baseline_ce);
    }
    return r;
}

LogitSamples router_max_logits(const TrainState& state, std::size_t layer)
{
    require_sparse(state.model, "router logit probe");
    const auto slot = moe_slot(state.model, layer);
    LogitSamples s;
    for (const auto& outcomes : eval_routing(state)) {
        const auto& o = outcomes[slot];
        const auto z = o.logits.data();
        const std::size_t e = o.experts();
        for (std::size_t t = 0; t < o.tokens(); ++t) {
            const double mx = *std::max_element(z.begin() + static_cast<std::ptrdiff_t>(t * e),
                                                z.begin() + static_cast<std::ptrdiff_t>((t + 1) * e));
            (o.modality[t] == Modality::visual ? s.visual : s.text).push_back(mx);
        }
    }
    return s;
}

KdeReport logit_kde(const TrainState& state, std::size_t layer)
{
    const auto s = router_max_logits(state, layer);
    KdeReport r;
    r.layer = layer;
    r.n_visual = s.visual.size();
    r.n_text = s.text.size();
    r.kde = compare_kde(s.visual, s.text);
    return r;
}

ModalityDistribution modality_distribution(const TrainState& state)
{
    require_sparse(state.model, "modality distribution probe");
    ModalityDistribution d;
    d.layers = state.model.moe_layer_indices();
    const std::size_t e = state.config.model.n_experts;
    std::vector<std::vector<std::array<std::size_t, 2>>> counts(d.layers.size(),
                                                                std::vector<std::array<std::size_t, 2>>(e, {0, 0}));
    std::array<std::size_t, 2> totals{0, 0};
    for (const auto& outcomes : eval_routing(state)) {
        for (std::size_t l = 0; l < outcomes.size(); ++l) {
            const auto& o = outcomes[l];
            for (std::size_t t = 0; t < o.tokens(); ++t) {
                const auto m = static_cast<std::size_t>(o.modality[t]);
                ++counts[l][static_cast<std::size_t>(o.selected[t * o.k])][m];
                if (l == 0)
                    ++totals[m];
            }
        }
    }
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        std::vector<std::array<double, 2>> frac(e);
        double tv = 0.0;
        for (std::size_t x = 0; x < e; ++x) {
            for (std::size_t m = 0; m < 2; ++m)
                frac[x][m] = totals[m] ? static_cast<double>(counts[l][x][m]) / static_cast<double>(totals[m]) : 0.0;
            tv += std::abs(frac[x][0] - frac[x][1]);
        }
        d.fractions.push_back(std::move(frac));
        d.tv_distance.push_back(0.5 * tv);
    }
    return d;
}

std::size_t last_moe_layer(const Model& model)
{
    const auto layers = model.moe_layer_indices();
    if (layers.empty())
        throw ContractError("model has no MoE layers");
    return layers.back();
}

std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_shuffle_csv(const std::string& path, const ShuffleReport& r)
{
    auto out = open_out(path);
    out << "trial,ce,delta\n";
    for (std::size_t t = 0; t < r.delta.size(); ++t)
        out << t << ',' << format_real(r.trial_ce[t]) << ',' << format_real(r.delta[t]) << '\n';
}

void write_kde_csv(const std::string& path, const KdeReport& r)
{
    auto out = open_out(path);
    out << "grid,density_V,density_T\n";
    const auto& k = r.kde;
    for (std::size_t i = 0; i < k.a.grid.size(); ++i)
        out << format_real(k.a.grid[i]) << ',' << format_real(k.a.density[i]) << ',' << format_real(k.b.density[i])
            << '\n';
}

void write_modal_dist_csv(const std::string& path, const ModalityDistribution& d)
{
    auto out = open_out(path);
    out << "layer,expert,frac_V,frac_T\n";
    for (std::size_t l = 0; l < d.layers.size(); ++l)
        for (std::size_t e = 0; e < d.fractions[l].size(); ++e)
            out << d.layers[l] << ',' << e << ',' << format_real(d.fractions[l][e][0]) << ','
                << format_real(d.fractions[l][e][1]) << '\n';
}

std::string shuffle_stats_json(const ShuffleReport& r)
{
    json j{{"baseline_ce", r.baseline_ce},
           {"trial_ce", r.trial_ce},
           {"delta", r.delta},
           {"mean_abs_delta", r.mean_abs_delta()},
           {"trials", r.delta.size()}};
    return j.dump();
}

std::string kde_stats_json(const KdeReport& r)
{
    json j{{"layer", r.layer},
           {"overlap", r.kde.overlap},
           {"bandwidth_V", r.kde.a.bandwidth},
           {"bandwidth_T", r.kde.b.bandwidth},
           {"integral_V", trapezoid(r.kde.a.grid, r.kde.a.density)},
           {"integral_T", trapezoid(r.kde.b.grid, r.kde.b.density)},
           {"samples_V", r.n_visual},
           {"samples_T", r.n_text}};
    return j.dump();
}

std::string dist_stats_json(const ModalityDistribution& d)
{
    json layers = json::array();
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        json frac = json::array();
        for (const auto& f : d.fractions[l])
            frac.push_back({f[0], f[1]});
        layers.push_back({{"layer", d.layers[l]}, {"fractions", frac}, {"tv_distance", d.tv_distance[l]}});
    }
    return json{{"layers", layers}}.dump();
}

void write_probe_report(const std::string& path, const std::string& kind, const TrainState& state,
                        std::uint64_t seed, const std::string& artifact, const std::string& stats_json)
{
    std::size_t samples = 0;
    for (std::size_t i = 0; i < state.config.eval_batches; ++i)
        samples += state.config.eval_batch_size * state.config.task.seq_len();
    json j{{"kind", kind},
           {"seed", seed},
           {"samples", samples},
           {"stage", state.stage},
           {"step", state.step},
           {"artifact", artifact},
           {"statistics", json::parse(stats_json)}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

void write_sidecar(const std::string& path, const RunConfig& config, std::uint64_t seed)
{
    json j{{"artifact", path},
           {"config_hash", config_hash(config)},
           {"seed", seed},
           {"format_version", kCheckpointVersion}};
    auto out = open_out(path + ".meta.json");
    out << j.dump(2) << '\n';
}

}  // namespace evomoe
