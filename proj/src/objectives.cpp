// SPDX-License-Identifier: Apache-2.0
#include "evomoe/objectives.hpp"

#include "evomoe/errors.hpp"
#include "evomoe/ops.hpp"

namespace evomoe {

Tensor autoregressive_loss(const Tensor& logits, std::span<const int> targets)
{
    if (logits.rank() == 3)
        return cross_entropy(reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)}), targets);
    return cross_entropy(logits, targets);
}

Tensor balance_loss(const Tensor& f, const Tensor& g)
{
    if (f.rank() != 1 || f.shape() != g.shape())
        throw DimensionError("balance loss needs matching [E] vectors, got " + shape_str(f.shape()) +
                             " and " + shape_str(g.shape()));
    const auto e = static_cast<double>(f.size());
    return scale(dot_const(g, f.data()), e);
}

Tensor balance_loss(const RoutingOutcome& outcome) { return balance_loss(outcome.f, outcome.g); }

Objective total_loss(const Tensor& logits, std::span<const int> targets,
                     const std::vector<RoutingOutcome>& outcomes, double alpha)
{
    if (alpha < 0.0)
        throw ContractError("alpha must be non-negative, got " + std::to_string(alpha));
    Objective out;
    out.report.alpha = alpha;
    const auto regressive = autoregressive_loss(logits, targets);
    out.report.regressive = regressive.item();
    if (outcomes.empty()) {
        out.total = regressive;
        out.report.total = out.report.regressive;
        return out;
    }
    Tensor aux;
    for (const auto& o : outcomes) {
        const auto layer = balance_loss(o);
        out.report.per_layer_aux.push_back(layer.item());
        aux = aux.defined() ? add(aux, layer) : layer;
    }
    aux = scale(aux, 1.0 / static_cast<double>(outcomes.size()));
    out.report.aux = aux.item();
    out.total = add(regressive, scale(aux, alpha));
    out.report.total = out.total.item();
    return out;
}

}  // namespace evomoe
