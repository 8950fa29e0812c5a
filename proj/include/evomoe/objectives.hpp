// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/router.hpp"
#include "evomoe/tensor.hpp"

#include <span>
#include <vector>

namespace evomoe {

inline constexpr double kDefaultAlpha = 0.001;

struct LossReport {
    double total = 0.0;
    double regressive = 0.0;
    double aux = 0.0;
    std::vector<double> per_layer_aux;
    double alpha = 0.0;
};

/// Mean next-token cross-entropy over positions whose target is not -1.
/// logits may be [B x S x V] or [N x V].
Tensor autoregressive_loss(const Tensor& logits, std::span<const int> targets);

/// E · Σ_i F_i G_i with F held constant and gradients flowing through G.
Tensor balance_loss(const Tensor& f, const Tensor& g);
Tensor balance_loss(const RoutingOutcome& outcome);

struct Objective {
    Tensor total;  // differentiable scalar
    LossReport report;
};

/// regressive + alpha · mean(per-layer balance losses); aux is 0 without MoE layers.
Objective total_loss(const Tensor& logits, std::span<const int> targets,
                     const std::vector<RoutingOutcome>& outcomes, double alpha);

}  // namespace evomoe
