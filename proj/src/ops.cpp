// SPDX-License-Identifier: Apache-2.0
#include "evomoe/ops.hpp"

#include "evomoe/errors.hpp"
#include "evomoe/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace evomoe {

namespace kn = kernels::active;

namespace {

void accumulate(const Tensor& t, std::span<const double> g)
{
    if (!t.requires_grad())
        return;
    auto& buf = t.node().grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] += g[i];
}

void require_rank(const Tensor& t, std::size_t rank, const char* op)
{
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
}

std::size_t last_extent(const Tensor& t, const char* op)
{
    if (t.rank() == 0)
        throw DimensionError(std::string(op) + ": scalar input");
    return t.shape().back();
}

}  // namespace

double sigmoid(double t)
{
    if (t >= 0.0)
        return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double silu(double t) { return t * sigmoid(t); }

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    std::vector<double> c(m * n);
    kn::gemm_nn(m, n, k, a.data(), b.data(), c);
    return Tensor::make_result({m, n}, std::move(c), {a, b}, [a, b, m, n, k](detail::Node& self) {
        if (a.requires_grad()) {
            std::vector<double> da(m * k);
            kn::gemm_nt(m, k, n, self.grad, b.data(), da);
            accumulate(a, da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(k * n);
            kn::gemm_tn(k, n, m, a.data(), self.grad, db);
            accumulate(b, db);
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()) + "^T");
    std::vector<double> c(m * n);
    kn::gemm_nt(m, n, k, a.data(), b.data(), c);
    return Tensor::make_result({m, n}, std::move(c), {a, b}, [a, b, m, n, k](detail::Node& self) {
        if (a.requires_grad()) {
            std::vector<double> da(m * k);
            kn::gemm_nn(m, k, n, self.grad, b.data(), da);
            accumulate(a, da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(n * k);
            kn::gemm_tn(n, k, m, self.grad, a.data(), db);
            accumulate(b, db);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] + b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        accumulate(a, self.grad);
        accumulate(b, self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] * b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        const std::size_t n = self.grad.size();
        if (a.requires_grad()) {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i)
                g[i] = self.grad[i] * b.data()[i];
            accumulate(a, g);
        }
        if (b.requires_grad()) {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i)
                g[i] = self.grad[i] * a.data()[i];
            accumulate(b, g);
        }
    });
}

Tensor scale(const Tensor& a, double factor)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] * factor;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [a, factor](detail::Node& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = self.grad[i] * factor;
        accumulate(a, g);
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias)
{
    require_rank(bias, 1, "add_bias");
    const std::size_t c = last_extent(x, "add_bias");
    if (bias.dim(0) != c)
        throw DimensionError("add_bias: " + shape_str(x.shape()) + " + " +
                             shape_str(bias.shape()));
    const std::size_t rows = x.size() / c;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] = x.data()[i * c + j] + bias.data()[j];
    return Tensor::make_result(x.shape(), std::move(out), {x, bias},
                               [x, bias, rows, c](detail::Node& self) {
                                   accumulate(x, self.grad);
                                   if (bias.requires_grad()) {
                                       std::vector<double> g(c);
                                       kn::column_sums(rows, c, self.grad, g);
                                       accumulate(bias, g);
                                   }
                               });
}

Tensor sum(const Tensor& x)
{
    double s = 0.0;
    for (double v : x.data())
        s += v;
    return Tensor::make_result({}, {s}, {x}, [x](detail::Node& self) {
        accumulate(x, std::vector<double>(x.size(), self.grad[0]));
    });
}

Tensor mean(const Tensor& x)
{
    if (x.size() == 0)
        throw ContractError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot_const(const Tensor& x, std::span<const double> w)
{
    if (w.size() != x.size())
        throw DimensionError("dot_const: " + shape_str(x.shape()) + " with " +
                             std::to_string(w.size()) + " weights");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        s += x.data()[i] * w[i];
    std::vector<double> weights(w.begin(), w.end());
    return Tensor::make_result({}, {s}, {x}, [x, weights](detail::Node& self) {
        std::vector<double> g(weights.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = weights[i] * self.grad[0];
        accumulate(x, g);
    });
}

Tensor column_mean(const Tensor& x)
{
    require_rank(x, 2, "column_mean");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (rows == 0)
        throw ContractError("column_mean over zero rows");
    std::vector<double> out(cols);
    kn::column_sums(rows, cols, x.data(), out);
    const double inv = 1.0 / static_cast<double>(rows);
    for (double& v : out)
        v *= inv;
    return Tensor::make_result({cols}, std::move(out), {x}, [x, rows, cols, inv](detail::Node& self) {
        std::vector<double> g(rows * cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                g[i * cols + j] = self.grad[j] * inv;
        accumulate(x, g);
    });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (shape_size(shape) != x.size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x},
                               [x](detail::Node& self) { accumulate(x, self.grad); });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end)
{
    require_rank(x, 2, "slice_cols");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (begin > end || end > cols)
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") of " + shape_str(x.shape()));
    const std::size_t w = end - begin;
    std::vector<double> out(rows * w);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j)
            out[i * w + j] = x.data()[i * cols + begin + j];
    return Tensor::make_result({rows, w}, std::move(out), {x},
                               [x, rows, cols, begin, w](detail::Node& self) {
                                   std::vector<double> g(rows * cols, 0.0);
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < w; ++j)
                                           g[i * cols + begin + j] = self.grad[i * w + j];
                                   accumulate(x, g);
                               });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps)
{
    const std::size_t c = last_extent(x, "layer_norm");
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != c || bias.dim(0) != c)
        throw DimensionError("layer_norm: input " + shape_str(x.shape()) + ", gain " +
                             shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    if (!(eps > 0.0))
        throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.size() / c;
    std::vector<double> y(x.size()), xhat(x.size()), rstd(rows);
    kn::layer_norm_rows(rows, c, x.data(), gain.data(), bias.data(), eps, y, xhat, rstd);
    return Tensor::make_result(
        x.shape(), std::move(y), {x, gain, bias},
        [x, gain, bias, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
            std::vector<double> dx(rows * c), dg(c), db(c);
            kn::layer_norm_rows_backward(rows, c, self.grad, xhat, rstd, gain.data(), dx, dg, db);
            accumulate(x, dx);
            accumulate(gain, dg);
            accumulate(bias, db);
        });
}

Tensor softmax(const Tensor& x)
{
    const std::size_t n = last_extent(x, "softmax");
    const std::size_t rows = n ? x.size() / n : 0;
    std::vector<double> y(x.size());
    kn::softmax_rows(rows, n, x.data(), y);
    return Tensor::make_result(x.shape(), std::move(y), {x}, [x, rows, n](detail::Node& self) {
        std::vector<double> g(rows * n);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* yr = self.data.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += yr[j] * dy[j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] = yr[j] * (dy[j] - dot);
        }
        accumulate(x, g);
    });
}

Tensor swiglu(const Tensor& x)
{
    const std::size_t two_h = last_extent(x, "swiglu");
    if (two_h % 2 != 0)
        throw DimensionError("swiglu: odd last extent in " + shape_str(x.shape()));
    const std::size_t h = two_h / 2;
    const std::size_t rows = x.size() / two_h;
    Shape shape = x.shape();
    shape.back() = h;
    std::vector<double> out(rows * h);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < h; ++j)
            out[i * h + j] = silu(x.data()[i * two_h + j]) * x.data()[i * two_h + h + j];
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [x, rows, h](detail::Node& self) {
        const std::size_t two_h = 2 * h;
        std::vector<double> g(rows * two_h);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < h; ++j) {
                const double gate = x.data()[i * two_h + j];
                const double value = x.data()[i * two_h + h + j];
                const double s = sigmoid(gate);
                const double dy = self.grad[i * h + j];
                g[i * two_h + j] = dy * value * s * (1.0 + gate * (1.0 - s));
                g[i * two_h + h + j] = dy * gate * s;
            }
        accumulate(x, g);
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids)
{
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0);
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside [0, " +
                                std::to_string(vocab) + ")");
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    return index_select_rows(table, rows);
}

Tensor causal_self_attention(const Tensor& qkv, std::size_t batch, std::size_t seq,
                             std::size_t heads)
{
    require_rank(qkv, 2, "causal_self_attention");
    if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0)
        throw DimensionError("causal_self_attention: qkv " + shape_str(qkv.shape()) +
                             " for batch " + std::to_string(batch) + ", seq " +
                             std::to_string(seq));
    const std::size_t c = qkv.dim(1) / 3;
    if (heads == 0 || c % heads != 0)
        throw DimensionError("causal_self_attention: width " + std::to_string(c) +
                             " not divisible by " + std::to_string(heads) + " heads");
    const kernels::AttentionDims dims{batch, seq, heads, c / heads};
    std::vector<double> out(batch * seq * c);
    std::vector<double> probs(batch * heads * seq * seq);
    kn::causal_attention(dims, qkv.data(), out, probs);
    return Tensor::make_result({batch * seq, c}, std::move(out), {qkv},
                               [qkv, dims, probs = std::move(probs)](detail::Node& self) {
                                   std::vector<double> g(qkv.size());
                                   kn::causal_attention_backward(dims, qkv.data(), probs,
                                                                 self.grad, g);
                                   accumulate(qkv, g);
                               });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets)
{
    const std::size_t v = last_extent(logits, "cross_entropy");
    const std::size_t rows = logits.size() / v;
    if (targets.size() != rows)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(logits.shape()));
    std::size_t count = 0;
    for (int t : targets) {
        if (t == -1)
            continue;
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw ContractError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                std::to_string(v) + ")");
        ++count;
    }
    if (count == 0)
        throw ContractError("cross_entropy: every position is excluded");

    std::vector<double> probs(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (targets[i] == -1)
            continue;
        const double* x = logits.data().data() + i * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j)
            mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(x[j] - mx);
            s += probs[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j)
            probs[i * v + j] /= s;
        total += (mx + std::log(s)) - x[targets[i]];
    }
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<int> tgt(targets.begin(), targets.end());
    return Tensor::make_result(
        {}, {total * inv}, {logits},
        [logits, rows, v, inv, tgt = std::move(tgt), probs = std::move(probs)](detail::Node& self) {
            std::vector<double> g(rows * v, 0.0);
            const double scale_factor = self.grad[0] * inv;
            for (std::size_t i = 0; i < rows; ++i) {
                if (tgt[i] == -1)
                    continue;
                for (std::size_t j = 0; j < v; ++j)
                    g[i * v + j] = probs[i * v + j] * scale_factor;
                g[i * v + static_cast<std::size_t>(tgt[i])] -= scale_factor;
            }
            accumulate(logits, g);
        });
}

Tensor index_select_rows(const Tensor& x, std::span<const std::size_t> rows)
{
    require_rank(x, 2, "index_select_rows");
    const std::size_t n = x.dim(0), c = x.dim(1);
    std::vector<double> out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n)
            throw ContractError("index_select_rows: row " + std::to_string(rows[i]) +
                                " of " + shape_str(x.shape()));
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] = x.data()[rows[i] * c + j];
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor::make_result({rows.size(), c}, std::move(out), {x},
                               [x, n, c, idx = std::move(idx)](detail::Node& self) {
                                   std::vector<double> g(n * c, 0.0);
                                   for (std::size_t i = 0; i < idx.size(); ++i)
                                       for (std::size_t j = 0; j < c; ++j)
                                           g[idx[i] * c + j] += self.grad[i * c + j];
                                   accumulate(x, g);
                               });
}

Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> rows)
{
    require_rank(base, 2, "index_add_rows");
    require_rank(src, 2, "index_add_rows");
    const std::size_t n = base.dim(0), c = base.dim(1);
    if (src.dim(1) != c || src.dim(0) != rows.size())
        throw DimensionError("index_add_rows: base " + shape_str(base.shape()) + ", src " +
                             shape_str(src.shape()) + ", " + std::to_string(rows.size()) +
                             " rows");
    std::vector<double> out(base.data().begin(), base.data().end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n)
            throw ContractError("index_add_rows: row " + std::to_string(rows[i]) + " of " +
                                shape_str(base.shape()));
        for (std::size_t j = 0; j < c; ++j)
            out[rows[i] * c + j] += src.data()[i * c + j];
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor::make_result({n, c}, std::move(out), {base, src},
                               [base, src, c, idx = std::move(idx)](detail::Node& self) {
                                   accumulate(base, self.grad);
                                   if (src.requires_grad()) {
                                       std::vector<double> g(idx.size() * c);
                                       for (std::size_t i = 0; i < idx.size(); ++i)
                                           for (std::size_t j = 0; j < c; ++j)
                                               g[i * c + j] = self.grad[idx[i] * c + j];
                                       accumulate(src, g);
                                   }
                               });
}

Tensor scale_rows(const Tensor& x, const Tensor& s)
{
    require_rank(x, 2, "scale_rows");
    require_rank(s, 1, "scale_rows");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (s.dim(0) != n)
        throw DimensionError("scale_rows: " + shape_str(x.shape()) + " by " +
                             shape_str(s.shape()));
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] = s.data()[i] * x.data()[i * c + j];
    return Tensor::make_result({n, c}, std::move(out), {x, s}, [x, s, n, c](detail::Node& self) {
        if (x.requires_grad()) {
            std::vector<double> g(n * c);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] = s.data()[i] * self.grad[i * c + j];
            accumulate(x, g);
        }
        if (s.requires_grad()) {
            std::vector<double> g(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    g[i] += self.grad[i * c + j] * x.data()[i * c + j];
            accumulate(s, g);
        }
    });
}

Tensor select_renormalize(const Tensor& probs, std::span<const int> selected, std::size_t k)
{
    require_rank(probs, 2, "select_renormalize");
    const std::size_t n = probs.dim(0), e = probs.dim(1);
    if (k == 0 || selected.size() != n * k)
        throw DimensionError("select_renormalize: " + std::to_string(selected.size()) +
                             " selections for " + std::to_string(n) + " rows at k=" +
                             std::to_string(k));
    std::vector<double> gates(n * k), totals(n);
    for (std::size_t t = 0; t < n; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const int ex = selected[t * k + j];
            if (ex < 0 || static_cast<std::size_t>(ex) >= e)
                throw ContractError("select_renormalize: expert " + std::to_string(ex) +
                                    " outside [0, " + std::to_string(e) + ")");
            s += probs.data()[t * e + static_cast<std::size_t>(ex)];
        }
        totals[t] = s;
        for (std::size_t j = 0; j < k; ++j)
            gates[t * k + j] = probs.data()[t * e + static_cast<std::size_t>(selected[t * k + j])] / s;
    }
    std::vector<int> sel(selected.begin(), selected.end());
    return Tensor::make_result(
        {n, k}, std::move(gates), {probs},
        [probs, n, e, k, sel = std::move(sel), totals = std::move(totals)](detail::Node& self) {
            std::vector<double> g(n * e, 0.0);
            for (std::size_t t = 0; t < n; ++t) {
                double dot = 0.0;
                for (std::size_t j = 0; j < k; ++j)
                    dot += self.grad[t * k + j] * self.data[t * k + j];
                for (std::size_t j = 0; j < k; ++j)
                    g[t * e + static_cast<std::size_t>(sel[t * k + j])] +=
                        (self.grad[t * k + j] - dot) / totals[t];
            }
            accumulate(probs, g);
        });
}

Tensor dtr_bottleneck(const Tensor& x, const Tensor& theta, std::size_t rank)
{
    require_rank(x, 2, "dtr_bottleneck");
    require_rank(theta, 2, "dtr_bottleneck");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (rank == 0 || rank % 2 != 0)
        throw ContractError("dtr_bottleneck: rank must be even and positive, got " +
                            std::to_string(rank));
    const std::size_t width = 2 * c * rank;
    if (theta.dim(0) != n || theta.dim(1) != width)
        throw DimensionError("dtr_bottleneck: x " + shape_str(x.shape()) + ", theta " +
                             shape_str(theta.shape()) + " at rank " + std::to_string(rank));
    const std::size_t half = rank / 2;
    std::vector<double> out(n * c, 0.0);
    std::vector<double> u(n * rank);
    for (std::size_t t = 0; t < n; ++t) {
        const double* xt = x.data().data() + t * c;
        const double* down = theta.data().data() + t * width;
        const double* up = down + c * rank;
        double* ut = u.data() + t * rank;
        for (std::size_t j = 0; j < rank; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < c; ++i)
                acc += xt[i] * down[i * rank + j];
            ut[j] = acc;
        }
        double* et = out.data() + t * c;
        for (std::size_t j = 0; j < half; ++j) {
            const double h = silu(ut[j]) * ut[half + j];
            for (std::size_t i = 0; i < c; ++i)
                et[i] += h * up[j * c + i];
        }
    }
    return Tensor::make_result(
        {n, c}, std::move(out), {x, theta},
        [x, theta, n, c, rank, half, width, u = std::move(u)](detail::Node& self) {
            std::vector<double> dx(n * c, 0.0), dtheta(n * width, 0.0);
            std::vector<double> du(rank);
            for (std::size_t t = 0; t < n; ++t) {
                const double* xt = x.data().data() + t * c;
                const double* down = theta.data().data() + t * width;
                const double* up = down + c * rank;
                const double* ut = u.data() + t * rank;
                const double* de = self.grad.data() + t * c;
                double* ddown = dtheta.data() + t * width;
                double* dup = ddown + c * rank;
                for (std::size_t j = 0; j < half; ++j) {
                    const double gate = ut[j];
                    const double value = ut[half + j];
                    const double s = sigmoid(gate);
                    const double h = gate * s * value;
                    double dh = 0.0;
                    for (std::size_t i = 0; i < c; ++i) {
                        dh += de[i] * up[j * c + i];
                        dup[j * c + i] = h * de[i];
                    }
                    du[j] = dh * value * s * (1.0 + gate * (1.0 - s));
                    du[half + j] = dh * gate * s;
                }
                for (std::size_t i = 0; i < c; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < rank; ++j) {
                        ddown[i * rank + j] = xt[i] * du[j];
                        acc += down[i * rank + j] * du[j];
                    }
                    dx[t * c + i] = acc;
                }
            }
            accumulate(x, dx);
            accumulate(theta, dtheta);
        });
}

}  // namespace evomoe
