// SPDX-License-Identifier: Apache-2.0
#include "evomoe/rng.hpp"

#include "evomoe/errors.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace evomoe {

// SplitMix64 finaliser.
std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64()
{
    const std::uint64_t key = mix64(seed_ ^ mix64(stream_ + 0x632be59bd9b4e019ULL));
    return mix64(key ^ mix64(counter_++));
}

double Rng::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi)
{
    const double u = uniform();
    const double v = lo + (hi - lo) * u;
    return v > hi ? hi : v;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0)
        throw ContractError("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit)
            return x % n;
    }
}

double Rng::normal()
{
    // Box-Muller, one value per pair of draws.
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::split(std::uint64_t id) const
{
    return Rng(seed_, mix64(stream_ ^ mix64(id + 0x2545f4914f6cdd1dULL)));
}

std::vector<std::size_t> Rng::permutation(std::size_t n)
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(p[i - 1], p[below(i)]);
    return p;
}

}  // namespace evomoe
