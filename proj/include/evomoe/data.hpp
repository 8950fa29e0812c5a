// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/batch.hpp"
#include "evomoe/config.hpp"

#include <cstdint>
#include <vector>

namespace evomoe {

/// Stream ids for the synthetic generator. Training batches of each stage
/// and the held-out evaluation set never share draws.
inline constexpr std::uint64_t kTrainStream = 100;  // + stage number
inline constexpr std::uint64_t kEvalStream = 999;

/// Next id under an affine rule on a sub-vocabulary starting at `offset`.
int apply_rule(const AffineRule& rule, int token, std::size_t offset, std::size_t vocab);

/// Batch `index` of stream (seed, stream). Each segment starts from a uniform
/// random token and follows its rule; the target at the last visual position
/// and at the final position is -1.
TokenBatch generate_batch(const TaskSpec& task, std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index, std::size_t batch_size);

/// The fixed held-out evaluation batches.
std::vector<TokenBatch> eval_batches(const RunConfig& config);

}  // namespace evomoe
