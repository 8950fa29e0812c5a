// SPDX-License-Identifier: Apache-2.0
#include "evomoe/pipeline.hpp"

#include "evomoe/data.hpp"
#include "evomoe/errors.hpp"
#include "evomoe/evolution.hpp"
#include "evomoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace evomoe {

TrainState start_training(const RunConfig& config)
{
    config.validate();
    TrainState s;
    s.config = config;
    s.model = init_dense_model(config.model, config.seed);
    s.stage = 1;
    s.step = 0;
    s.beta_rng = Rng(config.seed, kBetaStream);
    return s;
}

std::vector<std::string> transition_to_moe(TrainState& state)
{
    if (state.model.is_moe())
        throw ContractError("transition_to_moe needs a dense model, the state is already sparse");
    state.model.config = state.config.model;
    const auto& c = state.config.model;
    std::vector<std::string> warnings;
    const auto layers = c.moe_layers();
    if (layers.empty() && c.n_experts > 1)
        warnings.push_back("moe_placement yields no MoE layers although n_experts = " +
                           std::to_string(c.n_experts) + "; the model stays dense");
    for (std::size_t l : layers) {
        auto& b = state.model.blocks[l];
        ExpertBank bank;
        bank.experts.push_back(*b.ffn);
        bank.experts.resize(c.n_experts);
        if (c.shared_expert) {
            // Zero output projection: the sparse model starts as the same function.
            Ffn shared = clone_ffn(*b.ffn);
            std::fill(shared.w_out.data().begin(), shared.w_out.data().end(), 0.0);
            std::fill(shared.b_out.data().begin(), shared.b_out.data().end(), 0.0);
            bank.shared = shared;
        }
        init_evolved(bank);
        init_router(bank, c, state.config.seed, l);
        b.ffn.reset();
        b.moe = std::move(bank);
    }
    state.stage = 2;
    state.step = 0;
    state.adam = {};
    state.beta_rng = Rng(state.config.seed, kBetaStream);
    return warnings;
}

void begin_router_stage(TrainState& state)
{
    if (!state.model.is_moe())
        throw ContractError("the router stage needs a sparse model");
    state.stage = 3;
    state.step = 0;
    state.adam = {};
}

bool is_trainable(const ParamRef& p, int stage, bool evolve)
{
    switch (stage) {
    case 1: return true;
    case 2:
        if (!evolve)
            return p.kind == ParamKind::expert || p.kind == ParamKind::shared_expert || p.kind == ParamKind::router;
        return (p.kind == ParamKind::expert && p.expert == 0) || p.kind == ParamKind::shared_expert;
    case 3: return p.kind == ParamKind::router;
    default: throw ContractError("unknown stage " + std::to_string(stage));
    }
}

void apply_stage_mask(Model& model, int stage, bool evolve)
{
    for (auto& p : parameters(model)) {
        Tensor t = p.tensor;
        t.set_requires_grad(is_trainable(p, stage, evolve));
        t.zero_grad();
    }
    for (auto& b : model.blocks)
        if (b.moe)
            for (std::size_t e = 0; e < b.moe->experts.size(); ++e)
                b.moe->trainable[e] = stage == 2 && (e == 0 || !evolve);
}

ForwardOptions stage_forward(int stage, bool evolve)
{
    ForwardOptions o;
    o.force_expert0 = stage == 2 && evolve;
    return o;
}

void apply_stage_mask(Model& model, const RunConfig& config, int stage)
{
    apply_stage_mask(model, stage, config.stage(2).evolve);
}

ForwardOptions stage_forward(const RunConfig& config, int stage) { return stage_forward(stage, config.stage(2).evolve); }

double evaluate(const Model& model, const RunConfig& config, const ForwardOptions& options)
{
    double total = 0.0;
    const auto batches = eval_batches(config);
    for (const auto& b : batches) {
        const auto fwd = model_forward(model, b, options);
        total += autoregressive_loss(fwd.logits, b.targets).item();
    }
    return total / static_cast<double>(batches.size());
}

Model frozen_copy(const Model& model)
{
    auto out = clone_model(model);
    for (auto& p : parameters(out)) {
        Tensor t = p.tensor;
        t.set_requires_grad(false);
    }
    return out;
}

double evaluate(const TrainState& state)
{
    // Evaluation must not build a graph on trainable leaves.
    return evaluate(frozen_copy(state.model), state.config, stage_forward(state.config, state.stage));
}

bool stage_complete(const TrainState& state)
{
    return state.step >= state.config.stage(state.stage).steps;
}

std::vector<StepRecord> run_stage(TrainState& state, const RunOptions& options)
{
    const auto& cfg = state.config;
    const auto& st = cfg.stage(state.stage);
    if (state.stage >= 2 && !state.model.is_moe() && !cfg.model.moe_layers().empty())
        throw ContractError("stage " + std::to_string(state.stage) + " needs a sparse model");
    apply_stage_mask(state.model, cfg, state.stage);
    const auto params = parameters(state.model);
    EvolutionSchedule schedule{cfg.model.beta_ranges, state.beta_rng, state.stage == 2 && st.evolve};
    const auto fwd_opts = stage_forward(cfg, state.stage);

    std::vector<StepRecord> records;
    std::uint64_t taken = 0;
    while (state.step < st.steps && (!options.max_steps || taken < *options.max_steps)) {
        const auto batch = generate_batch(cfg.task, cfg.seed, kTrainStream + static_cast<std::uint64_t>(state.stage),
                                          state.step, st.batch_size);
        const auto fwd = model_forward(state.model, batch, fwd_opts);
        const auto obj = total_loss(fwd.logits, batch.targets, fwd.outcomes, cfg.alpha);
        if (!std::isfinite(obj.report.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at stage " << state.stage << " step " << state.step + 1
                << ": regressive=" << obj.report.regressive << " aux=" << obj.report.aux
                << " total=" << obj.report.total;
            for (const auto& p : params) {
                const auto d = p.tensor.data();
                if (std::any_of(d.begin(), d.end(), [](double v) { return !std::isfinite(v); })) {
                    msg << "; first non-finite parameter: " << p.name;
                    break;
                }
            }
            throw NumericError(msg.str());
        }
        backward(obj.total);
        adam_step(params, state.adam, st.learning_rate);
        for (const auto& p : params) {
            Tensor t = p.tensor;
            t.zero_grad();
        }
        StepRecord rec;
        rec.betas = evolution_step(state.model, schedule);
        state.beta_rng = schedule.rng;
        ++state.step;
        ++taken;
        rec.stage = state.stage;
        rec.step = state.step;
        rec.loss = obj.report;
        rec.lr = st.learning_rate;
        if (state.step % st.eval_every == 0 || state.step == st.steps)
            rec.eval_ce = evaluate(state);
        if (options.on_step)
            options.on_step(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace evomoe
