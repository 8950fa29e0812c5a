// SPDX-License-Identifier: Apache-2.0
#include "test_util.hpp"

#include "evomoe/ops.hpp"

#include <cmath>

namespace evomoe::testing {

Tensor random_tensor(Rng& rng, Shape shape, double stddev, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return Tensor::from(std::move(shape), random_values(rng, n, stddev), requires_grad);
}

std::vector<double> random_values(Rng& rng, std::size_t n, double stddev)
{
    std::vector<double> v(n);
    for (double& x : v)
        x = rng.normal(0.0, stddev);
    return v;
}

Tensor probe_loss(const Tensor& out, std::uint64_t seed)
{
    Rng rng(seed, 7);
    return dot_const(out, random_values(rng, out.size()));
}

std::vector<double> softmax_oracle(const std::vector<double>& row)
{
    long double s = 0.0L;
    for (double x : row)
        s += std::exp(static_cast<long double>(x));
    std::vector<double> out;
    for (double x : row)
        out.push_back(static_cast<double>(std::exp(static_cast<long double>(x)) / s));
    return out;
}

double log_sum_exp_oracle(const double* row, std::size_t n)
{
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i)
        s += std::exp(static_cast<long double>(row[i]));
    return static_cast<double>(std::log(s));
}

RunConfig tiny_config(RouterKind kind)
{
    RunConfig c;
    c.model.vocab_size = 16;
    c.model.d_model = 16;
    c.model.n_layers = 2;
    c.model.n_heads = 2;
    c.model.ffn_hidden = 16;
    c.model.router_kind = kind;
    c.model.hypernet_hidden = 8;
    c.model.max_seq_len = 8;
    c.task.vocab_a = 8;
    c.task.vocab_b = 8;
    c.task.rule_a = {3, 1};
    c.task.rule_b = {5, 2};
    c.task.prefix_len = 4;
    c.task.suffix_len = 4;
    c.eval_batches = 2;
    c.eval_batch_size = 4;
    for (int s = 1; s <= 3; ++s)
        c.stage(s) = {6, 4, 1e-2, 3, true};
    return c;
}

bool models_bitwise_equal(const Model& a, const Model& b)
{
    const auto pa = parameters(a);
    const auto pb = parameters(b);
    if (pa.size() != pb.size())
        return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].name != pb[i].name || !bitwise_equal(pa[i].tensor, pb[i].tensor))
            return false;
    return true;
}

void randomize_parameters(Model& model, std::uint64_t seed, double stddev)
{
    for (auto& p : parameters(model)) {
        Rng rng(seed, fnv1a(p.name));
        for (double& v : Tensor(p.tensor).data())
            v = rng.normal(0.0, stddev);
    }
}

}  // namespace evomoe::testing
