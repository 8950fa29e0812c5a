// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/config.hpp"
#include "evomoe/model.hpp"
#include "evomoe/objectives.hpp"
#include "evomoe/optim.hpp"
#include "evomoe/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace evomoe {

inline constexpr std::uint64_t kBetaStream = 7;

/// Everything a checkpoint holds: the model, optimizer and sampler state,
/// and how far training has progressed. `stage` is the stage this state
/// belongs to and `step` the number of its steps already taken.
struct TrainState {
    RunConfig config;
    Model model;
    AdamState adam;
    int stage = 1;
    std::uint64_t step = 0;
    Rng beta_rng;
};

/// Fresh dense model at stage I, step 0.
TrainState start_training(const RunConfig& config);

/// Turns a dense state into the stage-II sparse model. The dense FFN of each
/// MoE layer becomes expert 0, the other experts are copies of it, routers are
/// freshly drawn and the optimizer restarts. Returns warnings for the caller.
std::vector<std::string> transition_to_moe(TrainState& state);

/// Stage II -> III: same model, optimizer restarts.
void begin_router_stage(TrainState& state);

/// Whether a parameter is updated during `stage`. Stage II with `evolve` off
/// is plain MoE-tuning: every expert and the router train together.
bool is_trainable(const ParamRef& param, int stage, bool evolve = true);
/// Sets requires_grad (and the per-expert trainable flags) for `stage`.
void apply_stage_mask(Model& model, int stage, bool evolve = true);

/// Forward semantics of a stage: during stage II with evolution every token
/// goes to expert 0.
ForwardOptions stage_forward(int stage, bool evolve = true);
/// The two functions above, with `evolve` taken from the config.
void apply_stage_mask(Model& model, const RunConfig& config, int stage);
ForwardOptions stage_forward(const RunConfig& config, int stage);

struct StepRecord {
    int stage = 1;
    std::uint64_t step = 0;  // 1-based count of steps completed in the stage
    LossReport loss;
    std::vector<double> betas;
    double lr = 0.0;
    std::optional<double> eval_ce;
};

struct RunOptions {
    /// Stop after this many steps in this call, even if the stage is unfinished.
    std::optional<std::uint64_t> max_steps;
    std::function<void(const StepRecord&)> on_step;
};

/// Runs the remaining steps of state.stage: forward, loss, backward, Adam on
/// the stage's trainable parameters, then evolution during stage II. Throws
/// NumericError when the loss stops being finite.
std::vector<StepRecord> run_stage(TrainState& state, const RunOptions& options = {});

/// Independent copy with every parameter frozen, for read-only passes.
Model frozen_copy(const Model& model);

/// Mean held-out cross-entropy over the fixed evaluation batches.
double evaluate(const Model& model, const RunConfig& config, const ForwardOptions& options = {});
double evaluate(const TrainState& state);

bool stage_complete(const TrainState& state);

}  // namespace evomoe
