// SPDX-License-Identifier: Apache-2.0
#include "evomoe/kde.hpp"

#include "evomoe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace evomoe {

namespace {

constexpr double kReach = 8.0;  // grid extends this many bandwidths past the data
constexpr std::size_t kMinPoints = 513;
constexpr std::size_t kMaxPoints = 200001;

std::vector<double> even_grid(double lo, double hi, double max_spacing)
{
    std::size_t n = kMinPoints;
    if (hi > lo && max_spacing > 0.0) {
        const double want = std::ceil((hi - lo) / max_spacing) + 1.0;
        n = static_cast<std::size_t>(std::clamp(want, static_cast<double>(kMinPoints),
                                                static_cast<double>(kMaxPoints)));
    }
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

// Grid fine enough for one sample set: spacing at most a quarter bandwidth.
std::vector<double> own_grid(std::span<const double> s, double h)
{
    const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    return even_grid(*mn - kReach * h, *mx + kReach * h, h / 4.0);
}

}  // namespace

double silverman_bandwidth(std::span<const double> s)
{
    if (s.size() < 2)
        throw SampleSizeError("bandwidth needs at least two samples, got " + std::to_string(s.size()));
    const double n = static_cast<double>(s.size());
    double mean = 0.0;
    for (double x : s)
        mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : s)
        ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0))
        return 1e-3 * std::max(1.0, std::abs(mean));
    return 1.06 * sd * std::pow(n, -0.2);
}

std::vector<double> kde_density(std::span<const double> s, double h, std::span<const double> grid)
{
    if (!(h > 0.0))
        throw ContractError("bandwidth must be positive");
    const double norm = 1.0 / (static_cast<double>(s.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (double x : s) {
            const double u = (grid[i] - x) / h;
            acc += std::exp(-0.5 * u * u);
        }
        out[i] = acc * norm;
    }
    return out;
}

double trapezoid(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw DimensionError("trapezoid: grid and values differ in length");
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
        s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

KdeComparison compare_kde(std::span<const double> a, std::span<const double> b, std::size_t min_samples)
{
    if (a.size() < min_samples || b.size() < min_samples)
        throw SampleSizeError("KDE needs at least " + std::to_string(min_samples) + " samples per set, got " +
                              std::to_string(a.size()) + " and " + std::to_string(b.size()));
    KdeComparison out;
    out.a.bandwidth = silverman_bandwidth(a);
    out.b.bandwidth = silverman_bandwidth(b);
    const double ha = out.a.bandwidth, hb = out.b.bandwidth;

    const double lo = std::min(*std::min_element(a.begin(), a.end()) - kReach * ha,
                               *std::min_element(b.begin(), b.end()) - kReach * hb);
    const double hi = std::max(*std::max_element(a.begin(), a.end()) + kReach * ha,
                               *std::max_element(b.begin(), b.end()) + kReach * hb);
    const auto grid = even_grid(lo, hi, std::min(ha, hb) / 4.0);
    out.a.grid = grid;
    out.b.grid = grid;
    out.a.density = kde_density(a, ha, grid);
    out.b.density = kde_density(b, hb, grid);

    // The overlap integral runs on the union of per-set grids, so each density
    // is resolved at its own scale even when the supports are far apart.
    auto pts = own_grid(a, ha);
    const auto gb = own_grid(b, hb);
    pts.insert(pts.end(), gb.begin(), gb.end());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const auto fa = kde_density(a, ha, pts);
    const auto fb = kde_density(b, hb, pts);
    std::vector<double> lower(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        lower[i] = std::min(fa[i], fb[i]);
    out.overlap = std::clamp(trapezoid(pts, lower), 0.0, 1.0);
    return out;
}

}  // namespace evomoe
