// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace evomoe {

/// Counter-based generator: draw i of stream (seed, stream_id) is a pure
/// function of (seed, stream_id, i), so streams can be split, skipped and
/// checkpointed by value.
class Rng {
public:
    Rng() = default;
    Rng(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream keyed by `id`.
    Rng split(std::uint64_t id) const;

    std::vector<std::size_t> permutation(std::size_t n);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace evomoe
