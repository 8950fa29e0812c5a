// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/tensor.hpp"

#include <functional>

namespace evomoe {

/// Compares backward() against fourth-order central differences
/// (f(x±h), f(x±2h)), coordinate by coordinate.
///
/// `f` must rebuild its graph from `x` on every call and be deterministic.
/// Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// x's data is restored and its gradient cleared on return.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                         double h = 1e-3);

}  // namespace evomoe
