// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels against their OpenMP counterparts.
#include "evomoe/kernels.hpp"
#include "evomoe/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t stream)
{
    evomoe::Rng rng(7, stream);
    std::vector<double> v(n);
    for (double& x : v)
        x = rng.normal();
    return v;
}

template <auto Gemm>
void bm_gemm(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = filled(n * n, 1), b = filled(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Gemm(n, n, n, a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Attn>
void bm_attention(benchmark::State& state)
{
    const evomoe::kernels::AttentionDims d{16, static_cast<std::size_t>(state.range(0)), 2, 32};
    const auto qkv = filled(d.tokens() * 3 * d.width(), 3);
    std::vector<double> out(d.tokens() * d.width()), probs(d.batch * d.heads * d.seq * d.seq);
    for (auto _ : state) {
        Attn(d, qkv, out, probs);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Norm>
void bm_layer_norm(benchmark::State& state)
{
    const auto rows = static_cast<std::size_t>(state.range(0));
    const std::size_t cols = 64;
    const auto x = filled(rows * cols, 4), g = filled(cols, 5), b = filled(cols, 6);
    std::vector<double> y(rows * cols), xhat(rows * cols), rstd(rows);
    for (auto _ : state) {
        Norm(rows, cols, x, g, b, 1e-5, y, xhat, rstd);
        benchmark::DoNotOptimize(y.data());
    }
}

namespace ks = evomoe::kernels::serial;
namespace ko = evomoe::kernels::omp;

BENCHMARK(bm_gemm<ks::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<ko::gemm_nn>)->Name("gemm_nn/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<ks::gemm_tn>)->Name("gemm_tn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<ko::gemm_tn>)->Name("gemm_tn/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_attention<ks::causal_attention>)->Name("attention/serial")->Arg(32)->Arg(64);
BENCHMARK(bm_attention<ko::causal_attention>)->Name("attention/omp")->Arg(32)->Arg(64);
BENCHMARK(bm_layer_norm<ks::layer_norm_rows>)->Name("layer_norm/serial")->Arg(1024)->Arg(8192);
BENCHMARK(bm_layer_norm<ko::layer_norm_rows>)->Name("layer_norm/omp")->Arg(1024)->Arg(8192);

}  // namespace

BENCHMARK_MAIN();
