// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major compute kernels behind the autograd ops.
//
// Two implementations with one contract: `serial` is the plain reference,
// `omp` splits the independent outer loops across OpenMP threads. Every
// output element is reduced in the same order in both, so results agree
// bitwise and do not depend on the thread count. Each output row of a gemm
// depends only on the matching input row, which is what lets a gathered
// subset of tokens reproduce the full-batch result exactly.

#include <cstddef>
#include <span>

namespace evomoe::kernels {

struct AttentionDims {
    std::size_t batch;
    std::size_t seq;
    std::size_t heads;
    std::size_t head_dim;

    std::size_t width() const { return heads * head_dim; }
    std::size_t tokens() const { return batch * seq; }
};

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m x n] = a[m x k] * b[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m x n] = a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

void column_sums(std::size_t rows, std::size_t cols, std::span<const double> x,
                 std::span<double> out);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gain, std::span<const double> bias, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd);
void layer_norm_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> dy,
                              std::span<const double> xhat, std::span<const double> rstd,
                              std::span<const double> gain, std::span<double> dx,
                              std::span<double> dgain, std::span<double> dbias);

// qkv rows hold [q | k | v], each `width` wide; probs is [batch x heads x seq x seq].
void causal_attention(const AttentionDims& d, std::span<const double> qkv, std::span<double> out,
                      std::span<double> probs);
void causal_attention_backward(const AttentionDims& d, std::span<const double> qkv,
                               std::span<const double> probs, std::span<const double> dout,
                               std::span<double> dqkv);

}  // namespace serial

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void column_sums(std::size_t rows, std::size_t cols, std::span<const double> x,
                 std::span<double> out);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gain, std::span<const double> bias, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd);
void layer_norm_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> dy,
                              std::span<const double> xhat, std::span<const double> rstd,
                              std::span<const double> gain, std::span<double> dx,
                              std::span<double> dgain, std::span<double> dbias);
void causal_attention(const AttentionDims& d, std::span<const double> qkv, std::span<double> out,
                      std::span<double> probs);
void causal_attention_backward(const AttentionDims& d, std::span<const double> qkv,
                               std::span<const double> probs, std::span<const double> dout,
                               std::span<double> dqkv);

}  // namespace omp

// Implementation used by the autograd ops.
namespace active = omp;

}  // namespace evomoe::kernels
