// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/config.hpp"
#include "evomoe/model.hpp"
#include "evomoe/rng.hpp"

#include <vector>

namespace evomoe {

/// Retention ranges for experts 1..E-1 and the stream their β draws come from.
struct EvolutionSchedule {
    std::vector<BetaRange> ranges;
    Rng rng;
    bool active = false;

    /// One β per evolved expert, uniform within its range.
    std::vector<double> sample();
};

/// Sets every evolved expert bit-identical to expert 0 and marks it frozen.
void init_evolved(ExpertBank& bank);
void init_evolved(Model& model);

/// θ_n ← β_n·θ_n + (1 − β_n)·θ_0 for n = 1..E-1, elementwise over all FFN arrays.
void evolve_toward(ExpertBank& bank, const std::vector<double>& betas);

/// Samples one β per evolved expert and applies it to every MoE layer of the
/// model. Returns the sampled values, or nothing when the schedule is inactive.
std::vector<double> evolution_step(Model& model, EvolutionSchedule& schedule);

/// EMA update of one coordinate. β = 1 keeps `own`, β = 0 copies `target`,
/// and the result never leaves the closed interval between the two.
double ema_update(double own, double target, double beta);

double param_l2(const Ffn& a, const Ffn& b);

struct Divergence {
    double param_l2 = 0.0;
    double func_l2 = 0.0;
};

/// E x E matrix, row-major: parameter distance and mean per-token output
/// distance on `probe` for every expert pair of a bank.
std::vector<Divergence> expert_divergence(const ExpertBank& bank, const Tensor& probe);

}  // namespace evomoe
