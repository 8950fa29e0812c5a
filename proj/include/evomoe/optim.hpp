// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace evomoe {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates keyed by parameter name. Entries appear on first update.
struct AdamState {
    std::uint64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of every parameter whose tensor requires
/// gradients. Frozen parameters are skipped even if they hold a gradient.
void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& config = {});

}  // namespace evomoe
