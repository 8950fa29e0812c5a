// SPDX-License-Identifier: Apache-2.0
#include "evomoe/router.hpp"

#include "evomoe/errors.hpp"
#include "evomoe/ops.hpp"

#include <algorithm>
#include <numeric>

namespace evomoe {

std::vector<double> top1_fractions(std::span<const int> selected, std::size_t k, std::size_t experts)
{
    std::vector<double> f(experts, 0.0);
    const std::size_t n = selected.size() / k;
    if (n == 0)
        return f;
    std::vector<std::size_t> counts(experts, 0);
    for (std::size_t t = 0; t < n; ++t)
        ++counts[static_cast<std::size_t>(selected[t * k])];
    for (std::size_t e = 0; e < experts; ++e)
        f[e] = static_cast<double>(counts[e]) / static_cast<double>(n);
    return f;
}

RoutingOutcome finish_routing(const Tensor& logits, std::size_t k, std::vector<Modality> modality)
{
    if (logits.rank() != 2)
        throw DimensionError("router logits must be [N x E], got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), e = logits.dim(1);
    if (k < 1 || k > e)
        throw ContractError("top_k " + std::to_string(k) + " outside [1, " + std::to_string(e) + "]");
    if (!modality.empty() && modality.size() != n)
        throw DimensionError("modality tags (" + std::to_string(modality.size()) +
                             ") do not match router rows (" + std::to_string(n) + ")");

    RoutingOutcome out;
    out.logits = logits;
    out.k = k;
    out.modality = std::move(modality);
    out.probs = softmax(logits);
    out.selected.resize(n * k);
    const auto z = logits.data();
    std::vector<int> order(e);
    for (std::size_t t = 0; t < n; ++t) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = z.data() + t * e;
        // Stable on ties, so equal logits resolve to the lower expert index.
        std::stable_sort(order.begin(), order.end(),
                         [row](int a, int b) { return row[a] > row[b]; });
        std::copy_n(order.begin(), k, out.selected.begin() + static_cast<std::ptrdiff_t>(t * k));
    }
    out.gates = select_renormalize(out.probs, out.selected, k);
    out.f = Tensor::from({e}, top1_fractions(out.selected, k, e));
    out.g = column_mean(out.probs);
    return out;
}

RoutingOutcome linear_route(const Tensor& x, const Tensor& w, std::size_t k, std::vector<Modality> modality)
{
    return finish_routing(matmul(x, w), k, std::move(modality));
}

Tensor hypernet_packed(const Tensor& x, const Hypernetwork& h)
{
    return add_bias(matmul(add_bias(matmul(x, h.w1), h.b1), h.w2), h.b2);
}

std::pair<Tensor, Tensor> hypernet_forward(const Tensor& x, const Hypernetwork& h, std::size_t rank)
{
    const std::size_t n = x.dim(0), c = x.dim(1);
    const auto packed = hypernet_packed(x, h);
    if (packed.dim(1) != 2 * c * rank)
        throw DimensionError("hypernetwork emits " + std::to_string(packed.dim(1)) +
                             " values per token, expected 2*C*r = " + std::to_string(2 * c * rank));
    auto down = reshape(slice_cols(packed, 0, c * rank), {n, c, rank});
    auto up = reshape(slice_cols(packed, c * rank, 2 * c * rank), {n, rank, c});
    return {down, up};
}

RoutingOutcome dtr_route(const Tensor& x, std::span<const Modality> modality, const DtrRouter& router,
                         std::size_t k, DtrCounters* counters)
{
    if (x.rank() != 2)
        throw DimensionError("dtr_route expects [N x C] input, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (modality.size() != n)
        throw DimensionError("modality tags (" + std::to_string(modality.size()) +
                             ") do not match tokens (" + std::to_string(n) + ")");
    std::vector<std::size_t> rows_v, rows_t;
    for (std::size_t t = 0; t < n; ++t) {
        if (modality[t] == Modality::visual)
            rows_v.push_back(t);
        else if (modality[t] == Modality::text)
            rows_t.push_back(t);
        else
            throw ContractError("unknown modality tag " +
                                std::to_string(static_cast<int>(modality[t])) + " at token " +
                                std::to_string(t));
    }

    Tensor e = Tensor::zeros({n, c});
    auto route_group = [&](const std::vector<std::size_t>& rows, const Hypernetwork& h) {
        if (rows.empty())
            return;
        const auto xs = index_select_rows(x, rows);
        const auto feat = dtr_bottleneck(xs, hypernet_packed(xs, h), router.rank);
        e = index_add_rows(e, feat, rows);
    };
    route_group(rows_v, router.hv);
    route_group(rows_t, router.ht);
    if (counters) {
        counters->visual += rows_v.size();
        counters->text += rows_t.size();
    }
    const auto logits = add_bias(matmul(e, router.phi_w), router.phi_b);
    return finish_routing(logits, k, std::vector<Modality>(modality.begin(), modality.end()));
}

RoutingOutcome shuffle_assignments(const RoutingOutcome& outcome, std::span<const std::size_t> perm)
{
    const std::size_t e = outcome.experts();
    if (perm.size() != e)
        throw ContractError("permutation has " + std::to_string(perm.size()) + " entries, expected " +
                            std::to_string(e));
    std::vector<bool> hit(e, false);
    for (std::size_t p : perm) {
        if (p >= e || hit[p])
            throw ContractError("expert permutation is not a bijection on 0.." + std::to_string(e - 1));
        hit[p] = true;
    }
    RoutingOutcome out = outcome;
    for (int& s : out.selected)
        s = static_cast<int>(perm[static_cast<std::size_t>(s)]);
    out.f = Tensor::from({e}, top1_fractions(out.selected, out.k, e));
    return out;
}

}  // namespace evomoe
