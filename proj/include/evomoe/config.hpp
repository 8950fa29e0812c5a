// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace evomoe {

enum class RouterKind { linear, dtr };
enum class Placement { alternating, all, none };

struct BetaRange {
    double lo = 0.0;
    double hi = 0.0;
    friend bool operator==(const BetaRange&, const BetaRange&) = default;
};

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 2;
    std::size_t ffn_hidden = 128;
    std::size_t n_experts = 4;
    std::size_t top_k = 1;
    RouterKind router_kind = RouterKind::dtr;
    Placement moe_placement = Placement::alternating;
    bool skip_first_moe_layer = false;
    bool shared_expert = false;
    std::size_t dtr_rank = 4;
    std::size_t hypernet_hidden = 16;
    std::vector<BetaRange> beta_ranges{{0.9, 0.99}, {0.8, 0.89}, {0.7, 0.79}};
    std::size_t max_seq_len = 32;

    /// Throws ConfigError on the first violated invariant.
    void validate() const;
    /// Indices of the layers that carry an expert bank once the model is sparse.
    std::vector<std::size_t> moe_layers() const;
    std::size_t head_dim() const { return d_model / n_heads; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Affine next-token rule t -> (mul * t + add) mod |sub-vocabulary|.
struct AffineRule {
    std::int64_t mul = 1;
    std::int64_t add = 1;
    friend bool operator==(const AffineRule&, const AffineRule&) = default;
};

/// Synthetic two-modality sequence task. Sub-vocabulary A (ids [0, vocab_a))
/// fills the first prefix_len positions and is tagged visual; sub-vocabulary B
/// (ids [vocab_a, vocab_a + vocab_b)) fills the suffix and is tagged text.
struct TaskSpec {
    std::size_t vocab_a = 32;
    std::size_t vocab_b = 32;
    AffineRule rule_a{5, 3};
    AffineRule rule_b{3, 7};
    std::size_t prefix_len = 16;
    std::size_t suffix_len = 16;

    void validate() const;
    std::size_t seq_len() const { return prefix_len + suffix_len; }
    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct StageConfig {
    std::size_t steps = 1;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    std::size_t eval_every = 50;
    /// Stage II only. On: train expert 0 alone and evolve the others from it.
    /// Off: plain MoE-tuning, routed tokens with every expert and the router trainable.
    bool evolve = true;
    friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 42;
    double alpha = 0.001;
    std::size_t eval_batches = 8;
    std::size_t eval_batch_size = 16;
    ModelConfig model;
    TaskSpec task;
    std::array<StageConfig, 3> stages;

    RunConfig();
    void validate() const;
    const StageConfig& stage(int s) const;
    StageConfig& stage(int s);
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
/// Canonical JSON text: sorted keys, two-space indent, trailing newline.
std::string to_json(const RunConfig& config);
/// FNV-1a over the canonical JSON, rendered as 16 hex digits.
std::string config_hash(const RunConfig& config);

std::string to_string(RouterKind kind);
std::string to_string(Placement placement);
std::uint64_t fnv1a(const std::string& text);

}  // namespace evomoe
