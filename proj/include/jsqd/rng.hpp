#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace jsqd {

using Rng = std::mt19937_64;

// splitmix64 finalizer. Used to derive decorrelated seeds from (master, stream)
// pairs so replication seed lists are stable across platforms and compilers.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Seed for a named substream of a master seed. Two mixing rounds so that
// nearby (master, stream) pairs land far apart.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix64(master ^ mix64(stream + 1));
}

// Uniform double in [0, 1) with 53-bit resolution. std::uniform_real_distribution
// is not bit-stable across standard libraries; this mapping is, and determinism
// of sample paths is part of the contract.
inline double uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Multiply-shift; bias is below 2^-64 per draw,
// negligible for simulation purposes, and the result is platform-independent.
inline std::uint64_t uniform_below(Rng& g, std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(g()) * n) >> 64);
}

// Exponential waiting time with the given rate.
inline double exp_draw(Rng& g, double rate) {
    if (!(rate > 0.0))
        throw std::invalid_argument("exp_draw: rate must be positive");
    // log1p(-u) with u in [0,1) never hits log(0).
    return -std::log1p(-uniform01(g)) / rate;
}

// Floyd's algorithm: d distinct values from {0,...,n-1}, appended to `out`.
// The set is uniform over d-subsets (the order within `out` is not uniform,
// which no caller relies on).
inline void sample_distinct(Rng& g, std::uint64_t n, int d,
                            std::vector<int>& out) {
    out.clear();
    if (d <= 0) return;
    if (static_cast<std::uint64_t>(d) > n)
        throw std::invalid_argument("sample_distinct: d exceeds population");
    for (std::uint64_t j = n - static_cast<std::uint64_t>(d); j < n; ++j) {
        const int t = static_cast<int>(uniform_below(g, j + 1));
        bool seen = false;
        for (int x : out)
            if (x == t) { seen = true; break; }
        out.push_back(seen ? static_cast<int>(j) : t);
    }
}

}  // namespace jsqd
