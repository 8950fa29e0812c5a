// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace evomoe {

enum class Modality : unsigned char { visual = 0, text = 1 };

/// Row-major [batch x seq] token ids with per-position modality tags and
/// next-token targets; a target of -1 is excluded from the loss.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> tokens;
    std::vector<Modality> modality;
    std::vector<int> targets;

    std::size_t size() const { return batch * seq; }
    friend bool operator==(const TokenBatch&, const TokenBatch&) = default;
};

inline char modality_tag(Modality m) { return m == Modality::visual ? 'V' : 'T'; }

}  // namespace evomoe
