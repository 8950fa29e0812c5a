// SPDX-License-Identifier: Apache-2.0
#include "evomoe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace evomoe::kernels::serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = acc;
        }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a[p * m + i] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void column_sums(std::size_t rows, std::size_t cols, std::span<const double> x,
                 std::span<double> out)
{
    for (std::size_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i)
            acc += x[i * cols + j];
        out[j] = acc;
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y)
{
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xr = x.data() + i * cols;
        double* yr = y.data() + i * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j)
            mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < cols; ++j)
            yr[j] /= sum;
    }
}

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gain, std::span<const double> bias, double eps,
                     std::span<double> y, std::span<double> xhat, std::span<double> rstd)
{
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xr = x.data() + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            mean += xr[j];
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var *= inv_n;
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[i] = r;
        for (std::size_t j = 0; j < cols; ++j) {
            const double h = (xr[j] - mean) * r;
            xhat[i * cols + j] = h;
            y[i * cols + j] = h * gain[j] + bias[j];
        }
    }
}

void layer_norm_rows_backward(std::size_t rows, std::size_t cols, std::span<const double> dy,
                              std::span<const double> xhat, std::span<const double> rstd,
                              std::span<const double> gain, std::span<double> dx,
                              std::span<double> dgain, std::span<double> dbias)
{
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double g = dy[i * cols + j] * gain[j];
            m1 += g;
            m2 += g * xhat[i * cols + j];
        }
        m1 *= inv_n;
        m2 *= inv_n;
        for (std::size_t j = 0; j < cols; ++j) {
            const double g = dy[i * cols + j] * gain[j];
            dx[i * cols + j] = rstd[i] * (g - m1 - xhat[i * cols + j] * m2);
        }
    }
    for (std::size_t j = 0; j < cols; ++j) {
        double sg = 0.0;
        double sb = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            sg += dy[i * cols + j] * xhat[i * cols + j];
            sb += dy[i * cols + j];
        }
        dgain[j] = sg;
        dbias[j] = sb;
    }
}

void causal_attention(const AttentionDims& d, std::span<const double> qkv, std::span<double> out,
                      std::span<double> probs)
{
    const std::size_t w = d.width();
    const std::size_t row = 3 * w;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
    std::fill(probs.begin(), probs.end(), 0.0);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t h = 0; h < d.heads; ++h)
            for (std::size_t i = 0; i < d.seq; ++i) {
                const double* q = qkv.data() + (b * d.seq + i) * row + h * d.head_dim;
                double* p = probs.data() + ((b * d.heads + h) * d.seq + i) * d.seq;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kk = qkv.data() + (b * d.seq + j) * row + w + h * d.head_dim;
                    double s = 0.0;
                    for (std::size_t t = 0; t < d.head_dim; ++t)
                        s += q[t] * kk[t];
                    p[j] = s * scale;
                    mx = std::max(mx, p[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    sum += p[j];
                }
                for (std::size_t j = 0; j <= i; ++j)
                    p[j] /= sum;
                double* o = out.data() + (b * d.seq + i) * w + h * d.head_dim;
                for (std::size_t t = 0; t < d.head_dim; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= i; ++j)
                        acc += p[j] * qkv[(b * d.seq + j) * row + 2 * w + h * d.head_dim + t];
                    o[t] = acc;
                }
            }
}

void causal_attention_backward(const AttentionDims& d, std::span<const double> qkv,
                               std::span<const double> probs, std::span<const double> dout,
                               std::span<double> dqkv)
{
    const std::size_t w = d.width();
    const std::size_t row = 3 * w;
    const std::size_t hd = d.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::fill(dqkv.begin(), dqkv.end(), 0.0);
    std::vector<double> ds(d.seq);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t h = 0; h < d.heads; ++h)
            for (std::size_t i = 0; i < d.seq; ++i) {
                const double* p = probs.data() + ((b * d.heads + h) * d.seq + i) * d.seq;
                const double* go = dout.data() + (b * d.seq + i) * w + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* v = qkv.data() + (b * d.seq + j) * row + 2 * w + h * hd;
                    double dp = 0.0;
                    for (std::size_t t = 0; t < hd; ++t)
                        dp += go[t] * v[t];
                    ds[j] = dp;
                    dot += p[j] * dp;
                }
                for (std::size_t j = 0; j <= i; ++j)
                    ds[j] = p[j] * (ds[j] - dot);
                const double* q = qkv.data() + (b * d.seq + i) * row + h * hd;
                double* dq = dqkv.data() + (b * d.seq + i) * row + h * hd;
                for (std::size_t t = 0; t < hd; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= i; ++j)
                        acc += ds[j] * qkv[(b * d.seq + j) * row + w + h * hd + t];
                    dq[t] = acc * scale;
                }
                for (std::size_t j = 0; j <= i; ++j) {
                    double* dk = dqkv.data() + (b * d.seq + j) * row + w + h * hd;
                    double* dv = dqkv.data() + (b * d.seq + j) * row + 2 * w + h * hd;
                    for (std::size_t t = 0; t < hd; ++t) {
                        dk[t] += scale * ds[j] * q[t];
                        dv[t] += p[j] * go[t];
                    }
                }
            }
}

}  // namespace evomoe::kernels::serial
