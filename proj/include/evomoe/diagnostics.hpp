// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/kde.hpp"
#include "evomoe/pipeline.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace evomoe {

struct ShuffleReport {
    double baseline_ce = 0.0;
    std::vector<double> trial_ce;
    std::vector<double> delta;  // trial - baseline
    std::uint64_t seed = 0;
    double mean_abs_delta() const;
};

/// Held-out CE with every MoE layer's expert assignments relabelled by an
/// independent random permutation per trial. `identity` forces the identity
/// permutation. Throws ContractError on a dense model.
ShuffleReport shuffle_probe(const TrainState& state, std::size_t n_trials, std::uint64_t seed, bool identity = false);

/// Per-token maximum router logit of one MoE layer on the held-out batches,
/// split by modality.
struct LogitSamples {
    std::vector<double> visual;
    std::vector<double> text;
};
LogitSamples router_max_logits(const TrainState& state, std::size_t layer);

struct KdeReport {
    std::size_t layer = 0;
    KdeComparison kde;  // a = visual, b = text
    std::size_t n_visual = 0;
    std::size_t n_text = 0;
};

/// `layer` is a block index that must hold an expert bank.
KdeReport logit_kde(const TrainState& state, std::size_t layer);

struct ModalityDistribution {
    std::vector<std::size_t> layers;
    /// Per layer, E rows of (fraction of visual tokens, fraction of text tokens).
    std::vector<std::vector<std::array<double, 2>>> fractions;
    /// Per layer, 0.5 · Σ_e |frac_V - frac_T|.
    std::vector<double> tv_distance;
};

/// Share of each modality's routed (top-1) tokens that lands on each expert.
ModalityDistribution modality_distribution(const TrainState& state);

/// Last MoE layer of the model.
std::size_t last_moe_layer(const Model& model);

// Artifact writers. Floats carry 17 significant digits.
std::string format_real(double v);
void write_shuffle_csv(const std::string& path, const ShuffleReport& r);
void write_kde_csv(const std::string& path, const KdeReport& r);
void write_modal_dist_csv(const std::string& path, const ModalityDistribution& d);
/// JSON summary of a probe run, written to `path`.
void write_probe_report(const std::string& path, const std::string& kind, const TrainState& state,
                        std::uint64_t seed, const std::string& artifact, const std::string& stats_json);
std::string shuffle_stats_json(const ShuffleReport& r);
std::string kde_stats_json(const KdeReport& r);
std::string dist_stats_json(const ModalityDistribution& d);

/// `<path>.meta.json` holding the config hash, seed and format version.
void write_sidecar(const std::string& path, const RunConfig& config, std::uint64_t seed);

}  // namespace evomoe
