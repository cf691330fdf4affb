#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace jsqd {

// Tail-fraction state of a system: q(m, l) is the fraction of type-m servers
// with queue length >= l, stored for levels 0..L. Row m is nonincreasing in l
// with q(m, 0) == 1. Mass beyond L is folded into level L where the producer
// says so (empirical snapshots track the true maximum length, so nothing is
// lost there; ODE states truncate).
struct OccupancyVector {
    int M = 0;
    int L = 0;
    std::vector<double> q;  // row-major M x (L+1)

    OccupancyVector() = default;
    OccupancyVector(int M_, int L_)
        : M(M_), L(L_), q(static_cast<size_t>(M_) * (L_ + 1), 0.0) {
        for (int m = 0; m < M; ++m) at(m, 0) = 1.0;
    }

    double& at(int m, int l) { return q[static_cast<size_t>(m) * (L + 1) + l]; }
    double at(int m, int l) const {
        return q[static_cast<size_t>(m) * (L + 1) + l];
    }
    // Reads beyond the stored depth as zero tail mass.
    double tail(int m, int l) const { return l <= L ? at(m, l) : 0.0; }
};

// First invariant violation worse than `tol`, or empty string if valid.
inline std::string occupancy_violation(const OccupancyVector& o,
                                       double tol = 1e-9) {
    std::ostringstream err;
    if (o.M <= 0 || o.L < 0) return "occupancy has no shape";
    if (o.q.size() != static_cast<size_t>(o.M) * (o.L + 1))
        return "occupancy storage does not match M x (L+1)";
    for (int m = 0; m < o.M; ++m) {
        if (std::abs(o.at(m, 0) - 1.0) > tol) {
            err << "q(" << m << ",0) = " << o.at(m, 0) << " != 1";
            return err.str();
        }
        for (int l = 0; l <= o.L; ++l) {
            const double x = o.at(m, l);
            if (!(x >= -tol && x <= 1.0 + tol)) {
                err << "q(" << m << "," << l << ") = " << x << " outside [0,1]";
                return err.str();
            }
            if (l < o.L && o.at(m, l + 1) > x + tol) {
                err << "q(" << m << "," << l << ") = " << x << " < q(" << m
                    << "," << l + 1 << ") = " << o.at(m, l + 1)
                    << " breaks monotonicity";
                return err.str();
            }
        }
    }
    return std::string();
}

// Sup-norm distance; depths may differ (missing levels read as 0).
inline double linf_diff(const OccupancyVector& a, const OccupancyVector& b) {
    double worst = 0.0;
    const int L = std::max(a.L, b.L);
    for (int m = 0; m < a.M; ++m)
        for (int l = 0; l <= L; ++l)
            worst = std::max(worst, std::abs(a.tail(m, l) - b.tail(m, l)));
    return worst;
}

// Occupancy of an integer queue-length vector: counts per (type, level) with
// lengths above L folded into L, then divided by the per-type server count.
// A type with no servers keeps the empty row (1, 0, ..., 0).
inline OccupancyVector empirical_occupancy(const std::vector<int>& qlen,
                                           const std::vector<int>& stype,
                                           int M, int L) {
    OccupancyVector o(M, L);
    std::vector<long long> count(static_cast<size_t>(M) * (L + 1), 0);
    std::vector<long long> n_m(M, 0);
    for (size_t j = 0; j < qlen.size(); ++j) {
        const int m = stype[j];
        const int l = std::min(qlen[j], L);
        ++count[static_cast<size_t>(m) * (L + 1) + l];
        ++n_m[m];
    }
    for (int m = 0; m < M; ++m) {
        if (n_m[m] == 0) continue;
        long long tail = 0;
        for (int l = L; l >= 1; --l) {
            tail += count[static_cast<size_t>(m) * (L + 1) + l];
            o.at(m, l) = static_cast<double>(tail) / static_cast<double>(n_m[m]);
        }
        o.at(m, 0) = 1.0;
    }
    return o;
}

}  // namespace jsqd
