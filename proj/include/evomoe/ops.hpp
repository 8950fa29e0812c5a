// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "evomoe/tensor.hpp"

#include <cstddef>
#include <span>

namespace evomoe {

inline constexpr double kLayerNormEps = 1e-5;

// Linear algebra. matmul is strictly 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T, used for the tied output projection.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[... x C] + bias[C] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Reductions to a scalar
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Σ x_i w_i with w held constant.
Tensor dot_const(const Tensor& x, std::span<const double> w);
/// Mean over rows of a [N x E] matrix -> [E].
Tensor column_mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

// Normalisation and activations, over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);
Tensor softmax(const Tensor& x);
/// silu(gate) * value with the last axis split as [gate | value].
Tensor swiglu(const Tensor& x);

// Sequence model pieces
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// qkv is [batch*seq x 3C] with rows [q | k | v]; returns [batch*seq x C].
Tensor causal_self_attention(const Tensor& qkv, std::size_t batch, std::size_t seq,
                             std::size_t heads);
/// Mean token cross-entropy over rows whose target is not -1.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Token dispatch
Tensor index_select_rows(const Tensor& x, std::span<const std::size_t> rows);
/// base with src[i] added onto row rows[i].
Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> rows);
/// Row i of x multiplied by s[i].
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// gates[t, j] = probs[t, sel[t, j]] / Σ_j' probs[t, sel[t, j']]; selected is [N x k].
Tensor select_renormalize(const Tensor& probs, std::span<const int> selected, std::size_t k);

/// Per-token low-rank bottleneck with generated weights.
///
/// theta row t packs Θ_down (C x r, row-major) followed by Θ_up (r x C).
/// u = Θ_downᵀ x_t is split into gate/value halves, h = silu(gate) * value,
/// and e_t = Θ_up[0 : r/2]ᵀ h. Rows r/2.. of Θ_up are generated but inert.
Tensor dtr_bottleneck(const Tensor& x, const Tensor& theta, std::size_t rank);

double sigmoid(double t);
double silu(double t);

}  // namespace evomoe
