// SPDX-License-Identifier: Apache-2.0
#include "evomoe/tensor.hpp"

#include "evomoe/errors.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace evomoe {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::grad_buffer()
{
    if (grad.empty())
        grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape_size(shape) != values.size())
        throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                             std::to_string(values.size()) + " values");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({}, {value}, requires_grad);
}

void Tensor::throw_undefined()
{
    throw ContractError("use of an undefined tensor");
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t i) const
{
    const auto& s = shape();
    if (i >= s.size())
        throw DimensionError("axis " + std::to_string(i) + " out of range for " + shape_str(s));
    return s[i];
}

std::size_t Tensor::size() const { return node().data.size(); }


double Tensor::item() const
{
    if (size() != 1)
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool value) { node().requires_grad = value; }

bool Tensor::has_grad() const { return !node().grad.empty(); }

std::vector<double> Tensor::grad() const
{
    const auto& n = node();
    if (n.grad.empty())
        return std::vector<double>(n.data.size(), 0.0);
    return n.grad;
}

std::span<const double> Tensor::grad_view() const { return node().grad; }

void Tensor::zero_grad() { node().grad.clear(); }

Tensor Tensor::clone() const
{
    return from(shape(), node().data, requires_grad());
}

Tensor Tensor::detach() const
{
    return from(shape(), node().data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward_fn)
{
    Tensor out = from(std::move(shape), std::move(values), false);
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        auto& n = out.node();
        n.requires_grad = true;
        n.parents.reserve(inputs.size());
        for (auto& t : inputs)
            n.parents.push_back(t.node_);
        n.backward_fn = std::move(backward_fn);
    }
    return out;
}

void backward(const Tensor& loss)
{
    auto& root = loss.node();
    if (root.data.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
    if (!root.requires_grad)
        return;

    // Iterative post-order DFS over nodes that require gradients.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty())
            n->backward_fn(*n);
    }
    for (detail::Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace evomoe
