// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/batch.hpp"
#include "evomoe/tensor.hpp"

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace evomoe {

/// Per-token weight generator. Maps a token vector x to the packed row
/// (x w1 + b1) w2 + b2, laid out as Θ_down (C x r) then Θ_up (r x C).
struct Hypernetwork {
    Tensor w1;  // C x hidden
    Tensor b1;  // hidden
    Tensor w2;  // hidden x 2Cr
    Tensor b2;  // 2Cr
    Modality modality = Modality::visual;
};

struct DtrRouter {
    Hypernetwork hv;
    Hypernetwork ht;
    Tensor phi_w;  // C x E
    Tensor phi_b;  // E
    std::size_t rank = 0;
};

struct LinearRouter {
    Tensor w;  // C x E
};

struct RoutingOutcome {
    Tensor logits;               // N x E
    Tensor probs;                // N x E, softmax of logits
    std::size_t k = 1;
    std::vector<int> selected;   // N x k, descending logit order
    Tensor gates;                // N x k, renormalised over the selected experts
    Tensor f;                    // E, fraction of tokens whose top-1 choice is each expert
    Tensor g;                    // E, mean probability mass per expert
    std::vector<Modality> modality;

    std::size_t tokens() const { return logits.dim(0); }
    std::size_t experts() const { return logits.dim(1); }
};

/// Token counts that went through each hypernetwork during one dtr_route call.
struct DtrCounters {
    std::size_t visual = 0;
    std::size_t text = 0;
};

/// Top-k selection (ties toward the lower expert index), gates and F/G
/// statistics from router logits.
RoutingOutcome finish_routing(const Tensor& logits, std::size_t k, std::vector<Modality> modality);

RoutingOutcome linear_route(const Tensor& x, const Tensor& w, std::size_t k,
                            std::vector<Modality> modality = {});

/// Returns (Θ_down [N x C x r], Θ_up [N x r x C]).
std::pair<Tensor, Tensor> hypernet_forward(const Tensor& x, const Hypernetwork& h, std::size_t rank);
/// Packed [N x 2Cr] form of hypernet_forward, as consumed by dtr_bottleneck.
Tensor hypernet_packed(const Tensor& x, const Hypernetwork& h);

RoutingOutcome dtr_route(const Tensor& x, std::span<const Modality> modality, const DtrRouter& router,
                         std::size_t k, DtrCounters* counters = nullptr);

/// Relabels every selected expert through perm and recomputes F. Gates,
/// logits and G are left as they were.
RoutingOutcome shuffle_assignments(const RoutingOutcome& outcome, std::span<const std::size_t> perm);

/// F as a plain histogram of top-1 choices.
std::vector<double> top1_fractions(std::span<const int> selected, std::size_t k, std::size_t experts);

}  // namespace evomoe
