// SPDX-License-Identifier: Apache-2.0
#include "evomoe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

// Loop orders here are chosen for locality, but each output element still
// sees its terms added in ascending reduction index starting from 0.0, the
// same sequence as the serial reference.

namespace evomoe::kernels::omp {

using index_t = std::int64_t;

namespace {

// cr[j] += Σ_p av[p] * b[p, j] over p in [0, k), strictly in ascending p.
// Four reduction steps are fused per pass over the row; each element still
// sees ((c + a0 b0) + a1 b1) + ..., exactly the serial sequence.
inline void row_update(double* cr, std::size_t n, std::size_t k, const double* av, std::size_t a_stride,
                       const double* b)
{
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        const double a0 = av[p * a_stride], a1 = av[(p + 1) * a_stride];
        const double a2 = av[(p + 2) * a_stride], a3 = av[(p + 3) * a_stride];
        const double* b0 = b + p * n;
        const double* b1 = b0 + n;
        const double* b2 = b1 + n;
        const double* b3 = b2 + n;
        for (std::size_t j = 0; j < n; ++j) {
            double v = cr[j];
            v += a0 * b0[j];
            v += a1 * b1[j];
            v += a2 * b2[j];
            v += a3 * b3[j];
            cr[j] = v;
        }
    }
    for (; p < k; ++p) {
        const double a0 = av[p * a_stride];
        const double* b0 = b + p * n;
        for (std::size_t j = 0; j < n; ++j)
            cr[j] += a0 * b0[j];
    }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
#pragma omp parallel for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* cr = c.data() + i * n;
        std::fill(cr, cr + n, 0.0);
        row_update(cr, n, k, a.data() + i * k, 1, b.data());
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
    // Transposing b first turns the strict-order dot products into the
    // vectorisable row update of gemm_nn without changing any summation order.
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p)
            bt[p * n + j] = b[j * k + p];
    gemm_nn(m, n, k, a, bt, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c)
{
#pragma omp parallel for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* cr = c.data() + i * n;
        std::fill(cr, cr + n, 0.0);
        row_update(cr, n, k, a.data() + i, m, b.data());
    }
}

void column_sums(std::size_t rows, std::size_t cols, std::span<const double> x,
                 std::span<double> out)
{
    // Row-outer accumulation keeps the per-column order ascending in i.
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xr = x.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j)
            out[j] += xr[j];
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y)
{
#pragma omp parallel for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(rows); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
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
#pragma omp parallel for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(rows); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
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
#pragma omp parallel for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(rows); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
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
    std::fill(dgain.begin(), dgain.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
    std::fill(dbias.begin(), dbias.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            dgain[j] += dy[i * cols + j] * xhat[i * cols + j];
            dbias[j] += dy[i * cols + j];
        }
}

void causal_attention(const AttentionDims& d, std::span<const double> qkv, std::span<double> out,
                      std::span<double> probs)
{
    const std::size_t w = d.width();
    const std::size_t row = 3 * w;
    const std::size_t hd = d.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto pairs = static_cast<index_t>(d.batch * d.heads);
#pragma omp parallel for schedule(static)
    for (index_t bh = 0; bh < pairs; ++bh) {
        const std::size_t b = static_cast<std::size_t>(bh) / d.heads;
        const std::size_t h = static_cast<std::size_t>(bh) % d.heads;
        for (std::size_t i = 0; i < d.seq; ++i) {
            const double* q = qkv.data() + (b * d.seq + i) * row + h * hd;
            double* p = probs.data() + ((b * d.heads + h) * d.seq + i) * d.seq;
            std::fill(p, p + d.seq, 0.0);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                const double* kk = qkv.data() + (b * d.seq + j) * row + w + h * hd;
                double s = 0.0;
                for (std::size_t t = 0; t < hd; ++t)
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
            double* o = out.data() + (b * d.seq + i) * w + h * hd;
            std::fill(o, o + hd, 0.0);
            for (std::size_t j = 0; j <= i; ++j) {
                const double* v = qkv.data() + (b * d.seq + j) * row + 2 * w + h * hd;
                for (std::size_t t = 0; t < hd; ++t)
                    o[t] += p[j] * v[t];
            }
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
    const auto pairs = static_cast<index_t>(d.batch * d.heads);
#pragma omp parallel
    {
        std::vector<double> ds(d.seq);
#pragma omp for schedule(static)
        for (index_t bh = 0; bh < pairs; ++bh) {
            const std::size_t b = static_cast<std::size_t>(bh) / d.heads;
            const std::size_t h = static_cast<std::size_t>(bh) % d.heads;
            // Zero this pair's slice of dq/dk/dv.
            for (std::size_t i = 0; i < d.seq; ++i)
                for (std::size_t part = 0; part < 3; ++part) {
                    double* z = dqkv.data() + (b * d.seq + i) * row + part * w + h * hd;
                    std::fill(z, z + hd, 0.0);
                }
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
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kk = qkv.data() + (b * d.seq + j) * row + w + h * hd;
                    for (std::size_t t = 0; t < hd; ++t)
                        dq[t] += ds[j] * kk[t];
                }
                for (std::size_t t = 0; t < hd; ++t)
                    dq[t] *= scale;
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
    }
}

}  // namespace evomoe::kernels::omp
