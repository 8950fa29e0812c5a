// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/pipeline.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evomoe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian throughout:
///   "EVMO", u32 version, str config JSON, u32 stage, u64 step, u8 sparse,
///   u64 rng seed/stream/counter, u64 n, n x {str name, u32 rank, u64 dims[rank], f64 data},
///   u64 adam t, u64 m, m x {str name, u64 len, f64 m[len], f64 v[len]}
/// where str is u64 length followed by bytes.
std::vector<char> serialize(const TrainState& state);
TrainState deserialize(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

/// Rejects a checkpoint whose model or task differs from `expected`. For a
/// dense checkpoint only the backbone shape has to agree.
void check_compatible(const RunConfig& expected, const RunConfig& found, bool sparse);

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& bytes);

}  // namespace evomoe
