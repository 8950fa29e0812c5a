// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace evomoe {

struct KdeCurve {
    std::vector<double> grid;  // evenly spaced
    std::vector<double> density;
    double bandwidth = 0.0;
};

/// 1.06 · σ̂ · n^(-1/5) with the n-1 sample deviation. Degenerate samples
/// (σ̂ = 0) fall back to 1e-3 · max(1, |mean|).
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian kernel density estimate evaluated at each grid point.
std::vector<double> kde_density(std::span<const double> samples, double bandwidth, std::span<const double> grid);

double trapezoid(std::span<const double> x, std::span<const double> y);

struct KdeComparison {
    KdeCurve a;
    KdeCurve b;
    double overlap = 0.0;  // ∫ min(f_a, f_b), in [0, 1]
};

/// Density of each sample set on one shared even grid, plus the overlap
/// coefficient. Throws SampleSizeError below `min_samples` per set.
KdeComparison compare_kde(std::span<const double> a, std::span<const double> b, std::size_t min_samples = 10);

}  // namespace evomoe
