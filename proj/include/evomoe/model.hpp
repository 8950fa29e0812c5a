// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/batch.hpp"
#include "evomoe/config.hpp"
#include "evomoe/router.hpp"
#include "evomoe/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace evomoe {

/// SwiGLU feed-forward block: w_out · swiglu(w_in · x + b_in) + b_out.
struct Ffn {
    Tensor w_in;   // C x 2H, [gate | value]
    Tensor b_in;   // 2H
    Tensor w_out;  // H x C
    Tensor b_out;  // C
};

struct ExpertBank {
    std::vector<Ffn> experts;
    std::vector<bool> trainable;  // per expert
    std::optional<Ffn> shared;
    std::optional<LinearRouter> linear;
    std::optional<DtrRouter> dtr;
};

struct Block {
    Tensor ln1_g, ln1_b;
    Tensor w_qkv, b_qkv;  // C x 3C, rows [q | k | v]
    Tensor w_o, b_o;
    Tensor ln2_g, ln2_b;
    std::optional<Ffn> ffn;         // dense layers
    std::optional<ExpertBank> moe;  // sparse layers
};

struct Model {
    ModelConfig config;
    Tensor tok_emb;  // vocab x C, also the output projection
    Tensor pos_emb;  // max_seq_len x C
    std::vector<Block> blocks;
    Tensor lnf_g, lnf_b;

    bool is_moe() const;
    /// Block indices holding an expert bank.
    std::vector<std::size_t> moe_layer_indices() const;
};

enum class ParamKind { backbone, dense_ffn, expert, shared_expert, router };

struct ParamRef {
    std::string name;
    Tensor tensor;  // shares storage with the model
    ParamKind kind = ParamKind::backbone;
    int layer = -1;
    int expert = -1;
};

/// Every parameter array in a fixed order with a stable dotted name.
std::vector<ParamRef> parameters(const Model& model);

inline constexpr double kInitStddev = 0.02;

/// Dense model (every layer holds one FFN), weights ~ N(0, 0.02), biases 0.
/// Each array draws from its own stream keyed by its name.
Model init_dense_model(const ModelConfig& config, std::uint64_t seed);

/// Fresh router parameters for one bank of `config.router_kind`.
void init_router(ExpertBank& bank, const ModelConfig& config, std::uint64_t seed, std::size_t layer);

/// Same structure as `model` with independent parameter storage.
Model clone_model(const Model& model);

Ffn clone_ffn(const Ffn& f);
Tensor ffn_expert_forward(const Tensor& x, const Ffn& expert);

/// z [B*S x C] -> z + MSA(LN(z)).
Tensor attention_block(const Tensor& z, const Block& block, std::size_t batch, std::size_t seq,
                       std::size_t heads);

/// z [N x C] -> z + Σ gate · expert(LN(z)) (+ shared(LN(z))), routed by `routing`.
Tensor moe_layer_forward(const Tensor& z, const Block& block, const RoutingOutcome& routing);

struct ForwardOptions {
    /// Send every token to expert 0 with a constant unit gate. The router
    /// still runs so its statistics can be logged, but it receives no gradient.
    bool force_expert0 = false;
    /// One expert permutation per MoE layer, applied to the routed assignments.
    const std::vector<std::vector<std::size_t>>* permutations = nullptr;
    DtrCounters* counters = nullptr;
};

struct ForwardResult {
    Tensor logits;  // B x S x vocab
    std::vector<RoutingOutcome> outcomes;  // one per MoE layer, in layer order
};

ForwardResult model_forward(const Model& model, const TokenBatch& batch, const ForwardOptions& options = {});

}  // namespace evomoe
