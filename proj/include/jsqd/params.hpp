#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace jsqd {

// Thrown when a model is infeasible (arrival rate at or above total service
// capacity). The CLI maps this to its own exit code, distinct from usage errors.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parameters of a system with K dispatcher types and M server types.
//
// Each dispatcher receives tasks at Poisson rate lambda and routes every task
// to the shortest of d sampled compatible queues. xi bounds the
// dispatcher-to-server ratio: a size-N system carries W = round(xi*N)
// dispatchers. w and v are the type fractions on each side; u holds per-type
// service rates; p[k*M+m] is the probability that a type-k dispatcher is
// compatible with a given type-m server.
struct SystemParams {
    int K = 0;
    int M = 0;
    int d = 0;
    double lambda = 0.0;
    double xi = 1.0;
    std::vector<double> u;      // size M, service rates, >= 0
    std::vector<double> w;      // size K, dispatcher fractions, sum to 1
    std::vector<double> v;      // size M, server fractions, sum to 1
    std::vector<double> p;      // row-major K x M, entries in [0,1]
    std::vector<double> delta;  // size K, delta_k = sum_m p_{k,m} v_m (derived)

    double p_at(int k, int m) const { return p[static_cast<size_t>(k) * M + m]; }

    // Checks ranges and normalization and fills `delta`. Call after any edit.
    void validate();
};

inline void SystemParams::validate() {
    auto fail = [](const std::string& what) {
        throw std::invalid_argument("SystemParams: " + what);
    };
    if (K <= 0 || M <= 0) fail("K and M must be positive");
    if (d < 1) fail("d must be at least 1");
    if (!(lambda >= 0.0)) fail("lambda must be nonnegative");
    if (!(xi > 0.0)) fail("xi must be positive");
    if (u.size() != static_cast<size_t>(M)) fail("u must have M entries");
    if (w.size() != static_cast<size_t>(K)) fail("w must have K entries");
    if (v.size() != static_cast<size_t>(M)) fail("v must have M entries");
    if (p.size() != static_cast<size_t>(K) * M) fail("p must be K x M");

    double wsum = 0.0, vsum = 0.0;
    for (double x : w) {
        if (!(x > 0.0)) fail("dispatcher fractions w must be positive");
        wsum += x;
    }
    for (double x : v) {
        if (!(x > 0.0)) fail("server fractions v must be positive");
        vsum += x;
    }
    if (std::abs(wsum - 1.0) > 1e-9) fail("w must sum to 1");
    if (std::abs(vsum - 1.0) > 1e-9) fail("v must sum to 1");
    // Zero rates are admitted (a stopped server class is a legitimate test
    // system, e.g. pure-arrival conservation checks); operations that need
    // strictly positive rates guard for themselves.
    for (double x : u)
        if (!(x >= 0.0)) fail("service rates u must be nonnegative");
    for (double x : p)
        if (!(x >= 0.0 && x <= 1.0)) fail("compatibility entries must lie in [0,1]");

    delta.assign(K, 0.0);
    for (int k = 0; k < K; ++k)
        for (int m = 0; m < M; ++m) delta[k] += p_at(k, m) * v[m];
    for (int k = 0; k < K; ++k)
        if (!(delta[k] > 0.0))
            fail("dispatcher type " + std::to_string(k) +
                 " is compatible with nothing (delta_k = 0)");
}

// Mean service capacity per server, sum_m u_m v_m.
inline double mean_capacity(const SystemParams& P) {
    double s = 0.0;
    for (int m = 0; m < P.M; ++m) s += P.u[m] * P.v[m];
    return s;
}

// Strict capacity condition: the arrival rate per server, lambda*xi, must stay
// strictly below the mean service capacity. Equality is not sufficient.
inline bool capacity_ok(const SystemParams& P) {
    return P.lambda * P.xi < mean_capacity(P);
}

}  // namespace jsqd
