// SPDX-License-Identifier: Apache-2.0
#include "evomoe/evolution.hpp"

#include "evomoe/errors.hpp"

#include <algorithm>
#include <cmath>

namespace evomoe {

namespace {

std::vector<Tensor> arrays(const Ffn& f) { return {f.w_in, f.b_in, f.w_out, f.b_out}; }

}  // namespace

std::vector<double> EvolutionSchedule::sample()
{
    std::vector<double> betas;
    betas.reserve(ranges.size());
    for (const auto& r : ranges)
        betas.push_back(rng.uniform(r.lo, r.hi));
    return betas;
}

void init_evolved(ExpertBank& bank)
{
    if (bank.experts.empty())
        throw ContractError("expert bank is empty");
    const auto& source = bank.experts[0];
    for (std::size_t n = 1; n < bank.experts.size(); ++n)
        bank.experts[n] = clone_ffn(source);
    bank.trainable.assign(bank.experts.size(), false);
    bank.trainable[0] = true;
    for (std::size_t n = 1; n < bank.experts.size(); ++n)
        for (auto& t : arrays(bank.experts[n]))
            t.set_requires_grad(false);
}

void init_evolved(Model& model)
{
    for (auto& b : model.blocks)
        if (b.moe)
            init_evolved(*b.moe);
}

double ema_update(double own, double target, double beta)
{
    if (beta == 1.0)
        return own;
    if (beta == 0.0)
        return target;
    // β·own + (1 − β)·target, written as a step toward the target and clamped
    // so rounding cannot land outside [min, max] of the pair.
    const double v = own + (1.0 - beta) * (target - own);
    return std::clamp(v, std::min(own, target), std::max(own, target));
}

void evolve_toward(ExpertBank& bank, const std::vector<double>& betas)
{
    if (betas.size() + 1 != bank.experts.size())
        throw ContractError("got " + std::to_string(betas.size()) + " evolution values for " +
                            std::to_string(bank.experts.size()) + " experts");
    const auto source = arrays(bank.experts[0]);
    for (std::size_t n = 1; n < bank.experts.size(); ++n) {
        const double beta = betas[n - 1];
        auto dest = arrays(bank.experts[n]);
        for (std::size_t a = 0; a < dest.size(); ++a) {
            auto d = dest[a].data();
            const auto s = source[a].data();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] = ema_update(d[i], s[i], beta);
        }
    }
}

std::vector<double> evolution_step(Model& model, EvolutionSchedule& schedule)
{
    if (!schedule.active)
        return {};
    auto betas = schedule.sample();
    for (auto& b : model.blocks)
        if (b.moe)
            evolve_toward(*b.moe, betas);
    return betas;
}

double param_l2(const Ffn& a, const Ffn& b)
{
    const auto xs = arrays(a), ys = arrays(b);
    double s = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (xs[k].shape() != ys[k].shape())
            throw DimensionError("expert shapes differ: " + shape_str(xs[k].shape()) + " vs " +
                                 shape_str(ys[k].shape()));
        const auto x = xs[k].data(), y = ys[k].data();
        for (std::size_t i = 0; i < x.size(); ++i)
            s += (x[i] - y[i]) * (x[i] - y[i]);
    }
    return std::sqrt(s);
}

std::vector<Divergence> expert_divergence(const ExpertBank& bank, const Tensor& probe)
{
    const std::size_t e = bank.experts.size();
    const std::size_t n = probe.dim(0);
    std::vector<Tensor> outs;
    for (const auto& ex : bank.experts)
        outs.push_back(ffn_expert_forward(probe.detach(), ex).detach());
    std::vector<Divergence> m(e * e);
    for (std::size_t i = 0; i < e; ++i)
        for (std::size_t j = 0; j < e; ++j) {
            if (i == j)
                continue;
            const auto a = outs[i].data(), b = outs[j].data();
            const std::size_t c = outs[i].dim(1);
            double total = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                double s = 0.0;
                for (std::size_t k = 0; k < c; ++k)
                    s += (a[t * c + k] - b[t * c + k]) * (a[t * c + k] - b[t * c + k]);
                total += std::sqrt(s);
            }
            m[i * e + j] = {param_l2(bank.experts[i], bank.experts[j]), total / static_cast<double>(n)};
        }
    return m;
}

}  // namespace evomoe
