// SPDX-License-Identifier: Apache-2.0
#include "evomoe/optim.hpp"

#include <cmath>

namespace evomoe {

void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr, const AdamConfig& c)
{
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    for (const auto& p : params) {
        if (!p.tensor.requires_grad())
            continue;
        Tensor tensor = p.tensor;
        auto data = tensor.data();
        const auto g = tensor.grad_view();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        m.resize(data.size(), 0.0);
        v.resize(data.size(), 0.0);
        if (g.empty())
            continue;  // never reached by backward(): left untouched, moments included
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / correct1;
            const double vhat = v[i] / correct2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

}  // namespace evomoe
