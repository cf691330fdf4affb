#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/graph.hpp"
#include "jsqd/params.hpp"

namespace jsqd {

// Generalized binomial coefficient with a real upper argument:
// C(x, y) = x(x-1)...(x-y+1) / y!, and 0 whenever x < y. Integer x recovers
// the ordinary value.
inline double gbinom(double x, int y) {
    if (y < 0) return 0.0;
    if (y == 0) return 1.0;
    if (x < y) return 0.0;
    double num = 1.0, den = 1.0;
    for (int t = 0; t < y; ++t) {
        num *= (x - t);
        den *= (t + 1);
    }
    return num / den;
}

// Result of the exact finite-system load computation.
struct StabilityReport {
    double rho = 0.0;
    std::vector<int> witness;  // server subset achieving the maximum
};

// Exact worst-case load of a finite system: the maximum over nonempty server
// subsets U of
//   [sum_{j in U} u_type(j)]^-1 * sum_i lambda * (
//        C(|U n nbr(i)|, d) / C(deg_i, d)   when deg_i >= d,
//        |U n nbr(i)| / deg_i               when 0 < deg_i < d )
// Dispatchers with no neighbors drop their tasks and contribute nothing.
// The system is stable iff this value is < 1. Exhaustive over 2^N - 1
// subsets, so N is capped at 22.
inline StabilityReport exact_stability_load(const CompatibilityGraph& g,
                                            const SystemParams& P) {
    if (g.N > 22)
        throw std::invalid_argument(
            "exact_stability_load: N > 22 means over 4 million subsets per "
            "extra bit; use subcritical_margins for the asymptotic criterion");
    if (g.N <= 0) throw std::invalid_argument("exact_stability_load: empty graph");

    const int N = g.N;
    std::vector<std::uint32_t> nbr(g.W, 0);
    std::vector<double> inv_weight(g.W, 0.0);  // multiplier for the count term
    std::vector<char> fractional(g.W, 0);      // deg < d branch?
    for (int i = 0; i < g.W; ++i) {
        const int deg = static_cast<int>(g.adj[i].size());
        for (int j : g.adj[i]) nbr[i] |= (std::uint32_t{1} << j);
        if (deg == 0) continue;  // dropped tasks load nothing
        if (deg >= P.d) {
            inv_weight[i] = P.lambda / gbinom(deg, P.d);
        } else {
            fractional[i] = 1;
            inv_weight[i] = P.lambda / deg;
        }
    }

    // u_sum[S] over subsets via the low-bit recurrence (N <= 22 keeps this
    // table at a few tens of MB).
    const std::uint32_t full = (std::uint32_t{1} << N) - 1;
    std::vector<double> u_sum(static_cast<size_t>(full) + 1, 0.0);
    for (std::uint32_t S = 1; S <= full; ++S) {
        const int j = __builtin_ctz(S);
        u_sum[S] = u_sum[S & (S - 1)] + P.u[g.stype[j]];
    }

    StabilityReport best;
    best.rho = 0.0;
    std::uint32_t best_set = 0;
    for (std::uint32_t S = 1; S <= full; ++S) {
        if (!(u_sum[S] > 0.0)) continue;  // zero-rate subsets carry no work
        double num = 0.0;
        for (int i = 0; i < g.W; ++i) {
            const int hit = __builtin_popcount(S & nbr[i]);
            if (hit == 0) continue;
            num += inv_weight[i] *
                   (fractional[i] ? static_cast<double>(hit) : gbinom(hit, P.d));
        }
        const double rho = num / u_sum[S];
        if (rho > best.rho) {
            best.rho = rho;
            best_set = S;
        }
    }
    if (best_set == 0) best_set = 1;  // lambda == 0: any singleton witnesses 0
    for (int j = 0; j < N; ++j)
        if (best_set & (std::uint32_t{1} << j)) best.witness.push_back(j);
    return best;
}

// Asymptotic per-type load margins: r_m = (lambda xi / u_m) sum_k w_k p_km / delta_k.
// The limit system is subcritical iff every margin is < 1.
struct SubcriticalResult {
    bool subcritical = false;
    std::vector<double> margins;  // r_m per server type
    double worst = 0.0;
};

inline SubcriticalResult subcritical_margins(const SystemParams& P) {
    SubcriticalResult res;
    res.margins.assign(P.M, 0.0);
    for (int m = 0; m < P.M; ++m) {
        double s = 0.0;
        for (int k = 0; k < P.K; ++k) s += P.w[k] * P.p_at(k, m) / P.delta[k];
        s *= P.lambda * P.xi;
        res.margins[m] =
            P.u[m] > 0.0 ? s / P.u[m]
                         : (s > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        res.worst = std::max(res.worst, res.margins[m]);
    }
    res.subcritical = res.worst < 1.0;
    return res;
}

// Weighted load functional: weighting server types by alpha in [0,1]^M gives
//   (sum_m alpha_m v_m u_m)^-1 * lambda xi * sum_k w_k (sum_m alpha_m p_km v_m / delta_k)^d.
// If this exceeds 1 for ANY alpha the limit system cannot be subcritical, so a
// value > 1 is an instability certificate.
inline double load_lower_bound(const SystemParams& P,
                               const std::vector<double>& alpha) {
    if (alpha.size() != static_cast<size_t>(P.M))
        throw std::invalid_argument("load_lower_bound: alpha must have M entries");
    double cap = 0.0;
    for (int m = 0; m < P.M; ++m) {
        if (!(alpha[m] >= 0.0 && alpha[m] <= 1.0))
            throw std::invalid_argument("load_lower_bound: alpha entries in [0,1]");
        cap += alpha[m] * P.v[m] * P.u[m];
    }
    if (!(cap > 0.0))
        throw std::invalid_argument(
            "load_lower_bound: alpha selects no service capacity");
    double arrivals = 0.0;
    for (int k = 0; k < P.K; ++k) {
        double share = 0.0;
        for (int m = 0; m < P.M; ++m)
            share += alpha[m] * P.p_at(k, m) * P.v[m] / P.delta[k];
        arrivals += P.w[k] * std::pow(share, P.d);
    }
    return P.lambda * P.xi * arrivals / cap;
}

// Output of the compatibility-matrix design procedure.
struct DesignResult {
    std::vector<double> p;        // row-major K x M, max entry per row is 1
    std::vector<double> x;        // row-major K x M routing fractions, rows sum to 1
    double rho_star = 0.0;        // balanced per-type load achieved
    std::vector<double> margins;  // re-derived subcritical margins
};

// Builds a compatibility matrix whose induced routing balances every server
// type exactly at rho0 = lambda xi / sum_m v_m u_m < 1. Greedy water-filling:
// each server type m offers budget rho0 v_m u_m of arrival mass; dispatcher
// types consume their demand lambda xi w_k in increasing m order, ties to the
// lowest m. The routing fractions x_{k,m} convert to p by p ~ x/v with each
// row scaled so its largest entry is 1 (any positive row scaling gives the
// same normalized dynamics; this one maximizes headroom).
inline DesignResult design_compatibility(const SystemParams& base) {
    SystemParams P = base;  // p is ignored; only sizes, rates and fractions used
    if (!(P.lambda > 0.0))
        throw std::invalid_argument("design_compatibility: lambda must be positive");
    const double capacity = mean_capacity(P);
    if (!(P.lambda * P.xi < capacity))
        throw CapacityError(
            "design_compatibility: lambda*xi >= sum_m v_m u_m; no subcritical "
            "matrix exists");

    const double rho0 = P.lambda * P.xi / capacity;
    DesignResult out;
    out.rho_star = rho0;
    out.x.assign(static_cast<size_t>(P.K) * P.M, 0.0);
    out.p.assign(static_cast<size_t>(P.K) * P.M, 0.0);

    std::vector<double> budget(P.M);
    for (int m = 0; m < P.M; ++m) budget[m] = rho0 * P.v[m] * P.u[m];
    // Total budget equals total demand (both are lambda*xi), so the fill
    // consumes everything and each row's fractions sum to 1.
    int m = 0;
    for (int k = 0; k < P.K; ++k) {
        const double demand = P.lambda * P.xi * P.w[k];
        double left = demand;
        while (left > 1e-15 * demand && m < P.M) {
            const double take = std::min(left, budget[m]);
            out.x[static_cast<size_t>(k) * P.M + m] += take / demand;
            budget[m] -= take;
            left -= take;
            if (budget[m] <= 1e-15 * (rho0 * P.v[m] * P.u[m] + 1.0)) ++m;
        }
        // Numerical sweep-up: force the row to sum to exactly 1.
        double row = 0.0;
        for (int mm = 0; mm < P.M; ++mm)
            row += out.x[static_cast<size_t>(k) * P.M + mm];
        for (int mm = 0; mm < P.M; ++mm)
            out.x[static_cast<size_t>(k) * P.M + mm] /= row;
    }

    for (int k = 0; k < P.K; ++k) {
        double peak = 0.0;
        for (int mm = 0; mm < P.M; ++mm)
            peak = std::max(peak,
                            out.x[static_cast<size_t>(k) * P.M + mm] / P.v[mm]);
        for (int mm = 0; mm < P.M; ++mm)
            out.p[static_cast<size_t>(k) * P.M + mm] =
                out.x[static_cast<size_t>(k) * P.M + mm] / P.v[mm] / peak;
    }

    P.p = out.p;
    P.validate();
    out.margins = subcritical_margins(P).margins;
    return out;
}

// Maximum of sum_i C(x_i, d) over real allocations x_1..x_slots with
// sum x_i = total and 0 <= x_i <= cap. The maximizer packs as many slots as
// possible at the cap and puts the remainder in one slot (convexity), giving
//   k* C(cap, d) + C(total - cap k*, d)  with k* = floor(total/cap),
// or slots*C(cap, d) when every slot is full.
inline double max_binom_allocation(int slots, double total, double cap, int d) {
    if (slots <= 0 || !(cap > 0.0))
        throw std::invalid_argument("max_binom_allocation: need slots and cap > 0");
    if (!(total >= 0.0) || total > cap * slots + 1e-9)
        throw std::invalid_argument(
            "max_binom_allocation: total outside [0, slots*cap]");
    double ratio = total / cap;
    const double snapped = std::nearbyint(ratio);
    if (std::abs(ratio - snapped) < 1e-12 * std::max(1.0, ratio)) ratio = snapped;
    const long long kstar = static_cast<long long>(std::floor(ratio));
    if (kstar >= slots) return slots * gbinom(cap, d);
    return static_cast<double>(kstar) * gbinom(cap, d) +
           gbinom(total - cap * static_cast<double>(kstar), d);
}

}  // namespace jsqd
