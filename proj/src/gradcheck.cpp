// SPDX-License-Identifier: Apache-2.0
#include "evomoe/gradcheck.hpp"

#include "evomoe/errors.hpp"

#include <algorithm>
#include <cmath>

namespace evomoe {

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double h)
{
    if (!(h > 0.0))
        throw ContractError("finite_diff_check: step must be positive");
    const bool had_flag = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    backward(f(x));
    const std::vector<double> analytic = x.grad();
    x.zero_grad();
    x.set_requires_grad(false);

    double worst = 0.0;
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        auto at = [&](double v) {
            data[i] = v;
            return f(x).item();
        };
        // Fourth-order central stencil: truncation error O(h^4), so h can be
        // large enough that rounding in f stays far below the gradient.
        const double d1 = at(saved + h) - at(saved - h);
        const double d2 = at(saved + 2.0 * h) - at(saved - 2.0 * h);
        data[i] = saved;
        const double numeric = (8.0 * d1 - d2) / (12.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    x.set_requires_grad(had_flag);
    return worst;
}

}  // namespace evomoe
