// SPDX-License-Identifier: Apache-2.0
#include "evomoe/errors.hpp"
#include "evomoe/kde.hpp"
#include "evomoe/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace evomoe;

namespace {

std::vector<double> normal_samples(Rng& rng, std::size_t n, double mean, double stddev)
{
    std::vector<double> out(n);
    for (double& x : out)
        x = rng.normal(mean, stddev);
    return out;
}

// Direct long-double evaluation of a Gaussian KDE at one point.
long double density_at(const std::vector<double>& s, double h, long double x)
{
    long double sum = 0;
    for (double v : s) {
        const long double z = (x - v) / h;
        sum += std::exp(-0.5L * z * z);
    }
    return sum / (s.size() * h * std::sqrt(2.0L * std::numbers::pi_v<long double>));
}

// Overlap by midpoint rule on a dense uniform grid, independent of the
// adaptive grid the library uses.
double overlap_oracle(const std::vector<double>& a, const std::vector<double>& b)
{
    const double ha = silverman_bandwidth(a), hb = silverman_bandwidth(b);
    const double lo = std::min(*std::min_element(a.begin(), a.end()) - 12 * ha,
                               *std::min_element(b.begin(), b.end()) - 12 * hb);
    const double hi = std::max(*std::max_element(a.begin(), a.end()) + 12 * ha,
                               *std::max_element(b.begin(), b.end()) + 12 * hb);
    const int n = 20000;
    const long double dx = (hi - lo) / static_cast<long double>(n);
    long double s = 0;
    for (int i = 0; i < n; ++i) {
        const long double x = lo + (i + 0.5L) * dx;
        s += std::min(density_at(a, ha, x), density_at(b, hb, x));
    }
    return static_cast<double>(s * dx);
}

}  // namespace

TEST(Silverman, MatchesFormula)
{
    const std::vector<double> s{1.0, 2.0, 4.0, 7.0};
    // mean 3.5, unbiased variance 7
    EXPECT_NEAR(silverman_bandwidth(s), 1.06 * std::sqrt(7.0) * std::pow(4.0, -0.2), 1e-15);
    EXPECT_THROW(silverman_bandwidth(std::vector<double>{1.0}), SampleSizeError);
    EXPECT_GT(silverman_bandwidth(std::vector<double>{3.0, 3.0, 3.0}), 0.0);
}

TEST(Kde, DensityIsNonNegativeAndNormalisedProperty)
{
    Rng rng(21, 0);
    for (int draw = 0; draw < 20; ++draw) {
        const auto n = 10 + rng.below(200);
        const auto a = normal_samples(rng, n, rng.uniform(-5, 5), rng.uniform(0.1, 3.0));
        const auto b = normal_samples(rng, n, rng.uniform(-5, 5), rng.uniform(0.1, 3.0));
        const auto c = compare_kde(a, b);
        for (const auto* curve : {&c.a, &c.b}) {
            EXPECT_TRUE(std::all_of(curve->density.begin(), curve->density.end(), [](double d) { return d >= 0; }));
            EXPECT_NEAR(trapezoid(curve->grid, curve->density), 1.0, 1e-3) << "draw " << draw;
        }
        EXPECT_GE(c.overlap, 0.0);
        EXPECT_LE(c.overlap, 1.0);
    }
}

TEST(Kde, IdenticalSetsOverlapFully)
{
    Rng rng(22, 0);
    const auto a = normal_samples(rng, 300, 0.0, 1.0);
    EXPECT_NEAR(compare_kde(a, a).overlap, 1.0, 1e-6);
}

TEST(Kde, DistantSetsDoNotOverlap)
{
    Rng rng(23, 0);
    const auto a = normal_samples(rng, 200, -100.0, 1.0);
    const auto b = normal_samples(rng, 200, 100.0, 1.0);
    EXPECT_LT(compare_kde(a, b).overlap, 1e-3);
}

TEST(Kde, ShiftedNormalsMatchDenseGridOracle)
{
    Rng rng(24, 0);
    const auto a = normal_samples(rng, 500, 0.0, 1.0);
    const auto b = normal_samples(rng, 500, 1.0, 1.0);
    const double ovl = compare_kde(a, b).overlap;
    EXPECT_NEAR(ovl, overlap_oracle(a, b), 1e-4);
    // Population value 2·Φ(-1/2).
    EXPECT_NEAR(ovl, std::erfc(0.5 / std::sqrt(2.0)), 0.06);
}

TEST(Kde, OverlapIsSymmetricAndAffineInvariantProperty)
{
    Rng rng(25, 0);
    for (int draw = 0; draw < 20; ++draw) {
        const auto a = normal_samples(rng, 50 + rng.below(100), rng.uniform(-2, 2), rng.uniform(0.5, 2.0));
        const auto b = normal_samples(rng, 50 + rng.below(100), rng.uniform(-2, 2), rng.uniform(0.5, 2.0));
        const double ab = compare_kde(a, b).overlap;
        EXPECT_NEAR(ab, compare_kde(b, a).overlap, 1e-12);
        const double scale = rng.uniform(0.1, 10.0), shift = rng.uniform(-50, 50);
        auto ta = a, tb = b;
        for (double& x : ta)
            x = scale * x + shift;
        for (double& x : tb)
            x = scale * x + shift;
        EXPECT_NEAR(ab, compare_kde(ta, tb).overlap, 1e-6) << "draw " << draw;
    }
}

TEST(Kde, TooFewSamplesIsASampleSizeError)
{
    const std::vector<double> few(9, 1.0), many(10, 1.0);
    EXPECT_THROW(compare_kde(few, many), SampleSizeError);
    EXPECT_THROW(compare_kde(many, few), SampleSizeError);
    EXPECT_NO_THROW(compare_kde(many, many, 10));
}

TEST(Trapezoid, ExactForLinearFunctions)
{
    const std::vector<double> x{0.0, 0.5, 2.0, 3.0}, y{1.0, 2.0, 5.0, 7.0};
    EXPECT_NEAR(trapezoid(x, y), 0.75 + 5.25 + 6.0, 1e-15);
}
