// SPDX-License-Identifier: Apache-2.0
#include "evomoe/data.hpp"

#include "evomoe/errors.hpp"
#include "evomoe/rng.hpp"

namespace evomoe {

int apply_rule(const AffineRule& rule, int token, std::size_t offset, std::size_t vocab)
{
    const auto v = static_cast<std::int64_t>(vocab);
    const std::int64_t local = static_cast<std::int64_t>(token) - static_cast<std::int64_t>(offset);
    std::int64_t next = (rule.mul * local + rule.add) % v;
    if (next < 0)
        next += v;
    return static_cast<int>(next + static_cast<std::int64_t>(offset));
}

TokenBatch generate_batch(const TaskSpec& task, std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index, std::size_t batch_size)
{
    task.validate();
    if (batch_size == 0)
        throw ConfigError("batch_size must be positive");
    Rng rng = Rng(seed, stream).split(index);
    const std::size_t p = task.prefix_len, s = task.seq_len();
    TokenBatch b;
    b.batch = batch_size;
    b.seq = s;
    b.tokens.resize(batch_size * s);
    b.modality.resize(batch_size * s);
    b.targets.resize(batch_size * s);
    for (std::size_t r = 0; r < batch_size; ++r) {
        int* row = b.tokens.data() + r * s;
        row[0] = static_cast<int>(rng.below(task.vocab_a));
        for (std::size_t i = 1; i < p; ++i)
            row[i] = apply_rule(task.rule_a, row[i - 1], 0, task.vocab_a);
        row[p] = static_cast<int>(task.vocab_a + rng.below(task.vocab_b));
        for (std::size_t i = p + 1; i < s; ++i)
            row[i] = apply_rule(task.rule_b, row[i - 1], task.vocab_a, task.vocab_b);
        for (std::size_t i = 0; i < s; ++i) {
            b.modality[r * s + i] = i < p ? Modality::visual : Modality::text;
            const bool excluded = i == p - 1 || i == s - 1;
            b.targets[r * s + i] = excluded ? -1 : row[i + 1];
        }
    }
    return b;
}

std::vector<TokenBatch> eval_batches(const RunConfig& config)
{
    std::vector<TokenBatch> out;
    for (std::size_t i = 0; i < config.eval_batches; ++i)
        out.push_back(generate_batch(config.task, config.seed, kEvalStream, i, config.eval_batch_size));
    return out;
}

}  // namespace evomoe
