// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evomoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents that require it.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense float64 n-dimensional array with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage and graph position, the same way
/// parameters are shared between a model and its optimizer. Use clone() for
/// an independent copy. Ops applied to tensors that require gradients record
/// a node in the computation graph; backward() walks it once and releases it.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t size() const;

    std::span<double> data() { return node().data; }
    std::span<const double> data() const { return node().data; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    /// Gradient buffer; all zeros when nothing has been accumulated yet.
    std::vector<double> grad() const;
    std::span<const double> grad_view() const;
    void zero_grad();

    /// Deep copy of data (no grad, no graph), preserving requires_grad.
    Tensor clone() const;
    /// Same data, no graph history, requires_grad = false.
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Graph construction, used by op implementations.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward_fn);
    detail::Node& node() const
    {
        if (!node_) [[unlikely]]
            throw_undefined();
        return *node_;
    }

private:
    [[noreturn]] static void throw_undefined();
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until zero_grad(); intermediate nodes are released afterwards.
void backward(const Tensor& loss);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace evomoe
