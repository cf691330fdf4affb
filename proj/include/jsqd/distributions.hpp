#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/graph.hpp"
#include "jsqd/occupancy.hpp"
#include "jsqd/params.hpp"

namespace jsqd {

// A distribution (or nonnegative mass vector) over (server type, queue level)
// classes, dense over m in [0,M) and l in [0,L].
struct ClassPmf {
    int M = 0;
    int L = 0;
    std::vector<double> mass;  // row-major M x (L+1)

    ClassPmf() = default;
    ClassPmf(int M_, int L_)
        : M(M_), L(L_), mass(static_cast<size_t>(M_) * (L_ + 1), 0.0) {}

    double& at(int m, int l) { return mass[static_cast<size_t>(m) * (L + 1) + l]; }
    double at(int m, int l) const {
        return mass[static_cast<size_t>(m) * (L + 1) + l];
    }
    double total() const {
        double s = 0.0;
        for (double x : mass) s += x;
        return s;
    }
};

// The class distribution a type-k dispatcher would see if it sampled a
// uniform compatible server in the limit system: type m is hit with
// probability v_m p_{k,m} / delta_k, and within the type the queue level
// follows the occupancy pmf. Mass above the stored depth is folded into the
// last level, so the result always sums to 1.
inline ClassPmf weighted_global_pmf(const OccupancyVector& q, int k,
                                    const SystemParams& P) {
    if (k < 0 || k >= P.K)
        throw std::invalid_argument("weighted_global_pmf: bad dispatcher type");
    if (!(P.delta[k] > 0.0))
        throw std::invalid_argument(
            "weighted_global_pmf: dispatcher type has empty asymptotic "
            "neighborhood (delta_k = 0)");
    ClassPmf x(q.M, q.L);
    for (int m = 0; m < q.M; ++m) {
        const double wgt = P.v[m] * P.p_at(k, m) / P.delta[k];
        for (int l = 0; l < q.L; ++l)
            x.at(m, l) = wgt * (q.at(m, l) - q.at(m, l + 1));
        x.at(m, q.L) = wgt * q.at(m, q.L);  // tail fold
    }
    return x;
}

// Exact (type, level) counts inside one dispatcher's neighborhood. Queue
// lengths above L fold into L. Kept in integers; divide once for the pmf.
struct LocalCounts {
    int M = 0;
    int L = 0;
    long long total = 0;
    std::vector<long long> n;  // row-major M x (L+1)

    long long at(int m, int l) const {
        return n[static_cast<size_t>(m) * (L + 1) + l];
    }
    ClassPmf to_pmf() const {
        ClassPmf x(M, L);
        for (size_t idx = 0; idx < n.size(); ++idx)
            x.mass[idx] = static_cast<double>(n[idx]) / static_cast<double>(total);
        return x;
    }
};

inline LocalCounts local_counts(const std::vector<int>& qlen,
                                const std::vector<int>& stype,
                                const std::vector<int>& neighbors, int M, int L) {
    if (neighbors.empty())
        throw std::invalid_argument("local_counts: empty neighborhood");
    LocalCounts c;
    c.M = M;
    c.L = L;
    c.total = static_cast<long long>(neighbors.size());
    c.n.assign(static_cast<size_t>(M) * (L + 1), 0);
    for (int j : neighbors)
        ++c.n[static_cast<size_t>(stype[j]) * (L + 1) + std::min(qlen[j], L)];
    return c;
}

// The neighborhood class pmf of dispatcher i (its local empirical view).
inline ClassPmf local_pmf(const std::vector<int>& qlen,
                          const CompatibilityGraph& g, int i, int L) {
    return local_counts(qlen, g.stype, g.adj[i], g.M, L).to_pmf();
}

// l1 distance between a dispatcher's local view and the weighted global view
// of its type. Dispatchers with no neighbors get the maximal distance 2 (two
// pmfs can differ by at most 2 in l1, and a missing local view is as far off
// as possible).
inline double local_global_l1(const std::vector<int>& qlen,
                              const CompatibilityGraph& g, int i, int L,
                              const std::vector<ClassPmf>& global_per_type) {
    if (g.adj[i].empty()) return 2.0;
    const LocalCounts c = local_counts(qlen, g.stype, g.adj[i], g.M, L);
    const ClassPmf& x = global_per_type[g.dtype[i]];
    double dist = 0.0;
    for (int m = 0; m < g.M; ++m)
        for (int l = 0; l <= L; ++l)
            dist += std::abs(static_cast<double>(c.at(m, l)) /
                                 static_cast<double>(c.total) -
                             x.at(m, l));
    return dist;
}

// Ids of dispatchers whose local view strays from the global weighted view by
// more than eps in l1, under the current queue lengths. Monotone in eps.
inline std::vector<int> deviating_dispatchers(const std::vector<int>& qlen,
                                              const CompatibilityGraph& g,
                                              const SystemParams& P, int L,
                                              double eps) {
    if (!(eps > 0.0))
        throw std::invalid_argument("deviating_dispatchers: eps must be positive");
    const OccupancyVector occ = empirical_occupancy(qlen, g.stype, g.M, L);
    std::vector<ClassPmf> global_per_type;
    global_per_type.reserve(g.K);
    for (int k = 0; k < g.K; ++k)
        global_per_type.push_back(weighted_global_pmf(occ, k, P));
    std::vector<int> bad;
    for (int i = 0; i < g.W; ++i)
        if (local_global_l1(qlen, g, i, L, global_per_type) > eps)
            bad.push_back(i);
    return bad;
}

}  // namespace jsqd
