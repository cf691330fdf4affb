#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/occupancy.hpp"
#include "jsqd/params.hpp"
#include "jsqd/stability.hpp"

namespace jsqd {

namespace detail {
// x^n for small nonnegative integer n; avoids std::pow domain corner cases on
// slightly-negative intermediate stage values and is faster in the hot loop.
inline double ipow(double x, int n) {
    double r = 1.0;
    for (int t = 0; t < n; ++t) r *= x;
    return r;
}
}  // namespace detail

// The queue-tail distribution a type-k dispatcher faces in the limit:
// qt[l] = sum_m (v_m p_{k,m} / delta_k) q(m, l). qt[0] = 1 for valid q.
inline std::vector<double> dispatcher_view(const OccupancyVector& q, int k,
                                           const SystemParams& P) {
    std::vector<double> qt(q.L + 1, 0.0);
    for (int m = 0; m < q.M; ++m) {
        const double c = P.v[m] * P.p_at(k, m) / P.delta[k];
        for (int l = 0; l <= q.L; ++l) qt[l] += c * q.at(m, l);
    }
    return qt;
}

// Time derivative of the limiting occupancy dynamics:
//   dq(m,l) = -u_m (q(m,l) - q(m,l+1))
//             + lambda xi (q(m,l-1) - q(m,l)) * sum_k (p_{k,m} w_k / delta_k) * D(k,l)
// where D(k,l) = (qt(k,l-1)^d - qt(k,l)^d) / (qt(k,l-1) - qt(k,l)) and the gap
// below 1e-12 takes the analytic limit d * qt(k,l-1)^(d-1). Level 0 is pinned
// (dq = 0) and q(m, L+1) is treated as 0 (truncation closure).
//
// The class carries the parameter-derived coefficient tables and scratch
// buffers so repeated evaluations (RK4 stages) do not allocate.
class MeanFieldSystem {
public:
    MeanFieldSystem(const SystemParams& P, int L) : P_(P), L_(L) {
        if (L < 1) throw std::invalid_argument("MeanFieldSystem: L must be >= 1");
        pwd_.assign(static_cast<size_t>(P.K) * P.M, 0.0);
        vpd_.assign(static_cast<size_t>(P.K) * P.M, 0.0);
        for (int k = 0; k < P.K; ++k)
            for (int m = 0; m < P.M; ++m) {
                pwd_[static_cast<size_t>(k) * P.M + m] =
                    P.p_at(k, m) * P.w[k] / P.delta[k];
                vpd_[static_cast<size_t>(k) * P.M + m] =
                    P.v[m] * P.p_at(k, m) / P.delta[k];
            }
        qt_.assign(static_cast<size_t>(P.K) * (L + 1), 0.0);
        dkl_.assign(P.K, 0.0);
    }

    int levels() const { return L_; }
    const SystemParams& params() const { return P_; }

    // dq must hold M*(L+1) doubles; q is read in the same layout.
    void drift(const double* q, double* dq) {
        const int M = P_.M, K = P_.K, L = L_;
        for (int k = 0; k < K; ++k) {
            double* qt = qt_.data() + static_cast<size_t>(k) * (L + 1);
            for (int l = 0; l <= L; ++l) {
                double s = 0.0;
                for (int m = 0; m < M; ++m)
                    s += vpd_[static_cast<size_t>(k) * M + m] *
                         q[static_cast<size_t>(m) * (L + 1) + l];
                qt[l] = s;
            }
        }
        const double rate = P_.lambda * P_.xi;
        for (int m = 0; m < M; ++m) dq[static_cast<size_t>(m) * (L + 1)] = 0.0;
        for (int l = 1; l <= L; ++l) {
            for (int k = 0; k < K; ++k) {
                const double* qt = qt_.data() + static_cast<size_t>(k) * (L + 1);
                const double a = qt[l - 1], b = qt[l];
                dkl_[k] = std::abs(a - b) < 1e-12
                              ? P_.d * detail::ipow(a, P_.d - 1)
                              : (detail::ipow(a, P_.d) - detail::ipow(b, P_.d)) /
                                    (a - b);
            }
            for (int m = 0; m < M; ++m) {
                double s = 0.0;
                for (int k = 0; k < K; ++k)
                    s += pwd_[static_cast<size_t>(k) * M + m] * dkl_[k];
                const size_t row = static_cast<size_t>(m) * (L + 1);
                const double here = q[row + l];
                const double below = l < L ? q[row + l + 1] : 0.0;
                dq[row + l] = -P_.u[m] * (here - below) +
                              rate * (q[row + l - 1] - here) * s;
            }
        }
    }

private:
    SystemParams P_;
    int L_;
    std::vector<double> pwd_, vpd_;  // K x M coefficient tables
    std::vector<double> qt_;         // scratch: K x (L+1)
    std::vector<double> dkl_;        // scratch: K
};

// Convenience wrapper for one-off evaluations.
inline OccupancyVector drift(const OccupancyVector& q, const SystemParams& P) {
    MeanFieldSystem sys(P, q.L);
    OccupancyVector dq(q.M, q.L);
    for (int m = 0; m < q.M; ++m) dq.at(m, 0) = 0.0;
    sys.drift(q.q.data(), dq.q.data());
    return dq;
}

struct IntegrateStats {
    int steps = 0;
    long long projection_events = 0;  // post-step fixes beyond the report tol
    double max_projection = 0.0;      // worst fix magnitude
    double first_projection_t = -1.0;
};

struct IntegrateResult {
    OccupancyVector q;
    IntegrateStats stats;
};

struct OdePath {
    std::vector<double> times;
    std::vector<OccupancyVector> snaps;
    IntegrateStats stats;
};

namespace detail {

// Fixed-step classical RK4 with post-step projection back onto the state
// space: level 0 pinned at 1, entries clamped to [0,1], and each type row
// re-sorted into nonincreasing order. Projection displacements beyond
// `report_tol` are counted, not hidden. Steps shorten to land exactly on
// snapshot boundaries and on T.
inline IntegrateStats rk4_run(
    OccupancyVector& q, const SystemParams& P, double T, double h,
    double snapshot_dt,
    const std::function<void(double, const OccupancyVector&)>& observe,
    double report_tol = 1e-7) {
    if (!(T >= 0.0)) throw std::invalid_argument("integrate: T must be >= 0");
    if (!(h > 0.0)) throw std::invalid_argument("integrate: step must be > 0");
    {
        const std::string bad = occupancy_violation(q, 1e-9);
        if (!bad.empty())
            throw std::invalid_argument("integrate: invalid initial state: " + bad);
    }
    MeanFieldSystem sys(P, q.L);
    const size_t n = q.q.size();
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    IntegrateStats stats;

    double t = 0.0;
    double next_snap = 0.0;
    auto maybe_observe = [&]() {
        if (!observe) return;
        while (next_snap <= T + 1e-12 && t >= next_snap - 1e-12) {
            observe(std::min(next_snap, T), q);
            next_snap += snapshot_dt;
        }
    };
    maybe_observe();

    while (t < T - 1e-12) {
        double step = std::min(h, T - t);
        if (observe && next_snap <= T + 1e-12)
            step = std::min(step, next_snap - t > 1e-12 ? next_snap - t : h);
        const double* qd = q.q.data();
        sys.drift(qd, k1.data());
        for (size_t s = 0; s < n; ++s) tmp[s] = qd[s] + 0.5 * step * k1[s];
        sys.drift(tmp.data(), k2.data());
        for (size_t s = 0; s < n; ++s) tmp[s] = qd[s] + 0.5 * step * k2[s];
        sys.drift(tmp.data(), k3.data());
        for (size_t s = 0; s < n; ++s) tmp[s] = qd[s] + step * k3[s];
        sys.drift(tmp.data(), k4.data());
        for (size_t s = 0; s < n; ++s)
            q.q[s] += step / 6.0 * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]);
        t += step;
        ++stats.steps;

        // Projection back onto the state space.
        double worst = 0.0;
        for (int m = 0; m < q.M; ++m) {
            q.at(m, 0) = 1.0;
            bool sorted = true;
            for (int l = 1; l <= q.L; ++l) {
                double& x = q.at(m, l);
                if (std::isnan(x)) {
                    std::ostringstream err;
                    err << "integrate: NaN at t=" << t << ", type " << m
                        << ", level " << l << " (step " << stats.steps << ")";
                    throw std::runtime_error(err.str());
                }
                if (x < 0.0) {
                    worst = std::max(worst, -x);
                    x = 0.0;
                } else if (x > 1.0) {
                    worst = std::max(worst, x - 1.0);
                    x = 1.0;
                }
                if (x > q.at(m, l - 1)) {
                    worst = std::max(worst, x - q.at(m, l - 1));
                    sorted = false;
                }
            }
            if (!sorted)
                std::sort(q.q.begin() + static_cast<long>(m) * (q.L + 1) + 1,
                          q.q.begin() + static_cast<long>(m + 1) * (q.L + 1),
                          std::greater<double>());
        }
        if (worst > report_tol) {
            ++stats.projection_events;
            stats.max_projection = std::max(stats.max_projection, worst);
            if (stats.first_projection_t < 0.0) stats.first_projection_t = t;
        }
        maybe_observe();
    }
    return stats;
}

}  // namespace detail

// Integrate to time T and return the final state.
inline IntegrateResult integrate(const OccupancyVector& q0,
                                 const SystemParams& P, double T,
                                 double h = 1e-3) {
    IntegrateResult out;
    out.q = q0;
    out.stats = detail::rk4_run(out.q, P, T, h, 0.0, nullptr);
    return out;
}

// Integrate to time T, sampling the state every snapshot_dt (t=0 included,
// final time included).
inline OdePath integrate_path(const OccupancyVector& q0, const SystemParams& P,
                              double T, double snapshot_dt, double h = 1e-3) {
    if (!(snapshot_dt > 0.0))
        throw std::invalid_argument("integrate_path: snapshot_dt must be > 0");
    OdePath path;
    OccupancyVector q = q0;
    path.stats = detail::rk4_run(
        q, P, T, h, snapshot_dt,
        [&](double t, const OccupancyVector& s) {
            if (!path.times.empty() && t <= path.times.back() + 1e-12) return;
            path.times.push_back(t);
            path.snaps.push_back(s);
        });
    // The grid may not divide T; the endpoint is part of the contract.
    if (path.times.empty() || path.times.back() < T - 1e-12) {
        path.times.push_back(T);
        path.snaps.push_back(q);
    }
    return path;
}

struct FixedPointResult {
    OccupancyVector q;
    int levels = 0;              // truncation depth in effect at convergence
    double drift_l1 = 0.0;       // final l1 drift norm
    double rate_l1 = 0.0;        // final l1 state change per unit time
    double time_integrated = 0.0;
    bool subcritical = true;     // margin check on entry (warning when false)
    double flow_residual = 0.0;  // |sum_m v_m u_m q(m,1) - lambda xi|
    std::vector<double> level_residuals;  // per level 1..L identity residuals
};

namespace detail {
inline double drift_l1_norm(MeanFieldSystem& sys, const OccupancyVector& q) {
    std::vector<double> dq(q.q.size(), 0.0);
    sys.drift(q.q.data(), dq.data());
    double s = 0.0;
    for (double x : dq) s += std::abs(x);
    return s;
}
}  // namespace detail

// Fixed point of the limiting dynamics by long-time integration from the
// empty state (the fixed point is globally attracting in the subcritical
// regime). Convergence means both the l1 drift norm and the l1 state change
// per unit time fall below tol. If tail mass survives at the truncation depth
// (q(m, L) > 1e-12) the depth doubles and integration continues on the
// embedded state. Throws with a residual report when the time budget ends
// before convergence — as happens for supercritical inputs, where mass keeps
// piling into deeper levels.
inline FixedPointResult fixed_point(const SystemParams& P, int levels = 64,
                                    double tol = 1e-10, double t_max = 4000.0,
                                    double h = 1e-3) {
    if (levels < 2) throw std::invalid_argument("fixed_point: levels must be >= 2");
    FixedPointResult out;
    out.subcritical = subcritical_margins(P).subcritical;
    int L = levels;
    const int level_cap = 4096;
    OccupancyVector q(P.M, L);  // empty state
    double t = 0.0;
    const double chunk = 5.0;

    while (t < t_max) {
        MeanFieldSystem sys(P, L);
        const OccupancyVector before = q;
        detail::rk4_run(q, P, std::min(chunk, t_max - t), h, 0.0, nullptr);
        const double dt = std::min(chunk, t_max - t);
        t += dt;
        double moved = 0.0;
        for (size_t s = 0; s < q.q.size(); ++s)
            moved += std::abs(q.q[s] - before.q[s]);
        out.rate_l1 = moved / dt;
        out.drift_l1 = detail::drift_l1_norm(sys, q);
        if (out.drift_l1 < tol && out.rate_l1 < tol) {
            double tail = 0.0;
            for (int m = 0; m < P.M; ++m) tail = std::max(tail, q.at(m, L));
            if (tail <= 1e-12) break;  // converged and the truncation is clean
            if (2 * L > level_cap) {
                std::ostringstream err;
                err << "fixed_point: tail mass " << tail
                    << " persists at depth " << L
                    << " and the depth cap is reached; the system does not "
                       "appear to concentrate (subcritical="
                    << (out.subcritical ? "yes" : "no") << ")";
                throw std::runtime_error(err.str());
            }
            OccupancyVector wider(P.M, 2 * L);
            for (int m = 0; m < P.M; ++m)
                for (int l = 0; l <= L; ++l) wider.at(m, l) = q.at(m, l);
            q = wider;
            L *= 2;
        }
    }
    if (!(out.drift_l1 < tol && out.rate_l1 < tol)) {
        std::ostringstream err;
        err << "fixed_point: no convergence within t=" << t_max
            << " (l1 drift " << out.drift_l1 << ", l1 rate " << out.rate_l1
            << ", tol " << tol << ", depth " << L << ", subcritical="
            << (out.subcritical ? "yes" : "no") << ")";
        throw std::runtime_error(err.str());
    }

    out.q = q;
    out.levels = L;
    out.time_integrated = t;

    // Algebraic identities of the fixed point. Flow balance: the total
    // service rate spent equals the total arrival rate. Per level l >= 1:
    // sum_m v_m u_m q(m,l) = lambda xi sum_k w_k qt(k,l-1)^d, up to the
    // truncated tail (negligible under the 1e-12 tail guard above).
    double flow = 0.0;
    for (int m = 0; m < P.M; ++m) flow += P.v[m] * P.u[m] * q.at(m, 1);
    out.flow_residual = std::abs(flow - P.lambda * P.xi);
    std::vector<std::vector<double>> qt;
    qt.reserve(P.K);
    for (int k = 0; k < P.K; ++k) qt.push_back(dispatcher_view(q, k, P));
    out.level_residuals.assign(L + 1, 0.0);
    for (int l = 1; l <= L; ++l) {
        double lhs = 0.0;
        for (int m = 0; m < P.M; ++m) lhs += P.v[m] * P.u[m] * q.at(m, l);
        double rhs = 0.0;
        for (int k = 0; k < P.K; ++k)
            rhs += P.w[k] * detail::ipow(qt[k][l - 1], P.d);
        rhs *= P.lambda * P.xi;
        out.level_residuals[l] = std::abs(lhs - rhs);
    }
    return out;
}

// Forward re-derivation of each level from the two above it, using the
// rearranged balance equation
//   q(m,l+1) = q(m,l) - (lambda xi / u_m)(q(m,l-1) - q(m,l)) sum_k pwd D(k,l).
// The forward recursion is numerically unstable (absolute errors amplify
// roughly d-fold per level), so levels whose stored value is at or below
// `floor_` carry no reliable signal and are skipped, as are types with zero
// service rate (the rearrangement divides by u_m).
struct RecursionReport {
    double max_residual = 0.0;  // max |rederived - stored| over checked levels
    int checked = 0;
    int skipped = 0;
};

inline RecursionReport verify_level_recursion(const OccupancyVector& q,
                                              const SystemParams& P,
                                              double floor_ = 1e-8) {
    RecursionReport rep;
    std::vector<std::vector<double>> qt;
    qt.reserve(P.K);
    for (int k = 0; k < P.K; ++k) qt.push_back(dispatcher_view(q, k, P));
    const double rate = P.lambda * P.xi;
    for (int l = 1; l < q.L; ++l) {
        std::vector<double> dkl(P.K);
        for (int k = 0; k < P.K; ++k) {
            const double a = qt[k][l - 1], b = qt[k][l];
            dkl[k] = std::abs(a - b) < 1e-12
                         ? P.d * detail::ipow(a, P.d - 1)
                         : (detail::ipow(a, P.d) - detail::ipow(b, P.d)) / (a - b);
        }
        for (int m = 0; m < P.M; ++m) {
            if (!(P.u[m] > 0.0) || q.at(m, l + 1) <= floor_) {
                ++rep.skipped;
                continue;
            }
            double s = 0.0;
            for (int k = 0; k < P.K; ++k)
                s += P.p_at(k, m) * P.w[k] / P.delta[k] * dkl[k];
            const double rederived =
                q.at(m, l) - rate / P.u[m] * (q.at(m, l - 1) - q.at(m, l)) * s;
            rep.max_residual =
                std::max(rep.max_residual, std::abs(rederived - q.at(m, l + 1)));
            ++rep.checked;
        }
    }
    return rep;
}

// Double-exponential tail certificate. Writing qtmax(l) = max_k qt(k,l), the
// level identity gives the sufficient inequality
//   q(m, l+1) <= (lambda xi / (v_m u_m)) * qtmax(l)^d        (checked per level)
// and iterating it yields, once the contraction factor
//   c = qtmax(l0-1)^(d-1) * max_m lambda xi/(v_m u_m)
// drops below 1 at some level l0, the closed-form envelope
//   q(m, l) <= b_m a_m^(d^l)  for l >= l_m = l0 + 1,
// with a_m = c^(1/d^l0) in (0,1) and b_m = (lambda xi/(v_m u_m)) qtmax(l0-1)^d.
// The envelope is verified numerically on retained levels. Requires d >= 2
// (d = 1 tails are geometric, not doubly exponential).
struct TailCertificate {
    bool exists = false;
    int violating_level = -1;     // first level where a check failed, else -1
    std::vector<int> l_m;         // per type: first certified level
    std::vector<double> a_m, b_m; // per type: envelope constants
    double slope = 0.0;           // affine fit of log(-log qtmax) on deep levels
    int slope_points = 0;
};

inline TailCertificate tail_certificate(const OccupancyVector& q,
                                        const SystemParams& P) {
    if (P.d < 2)
        throw std::invalid_argument(
            "tail_certificate: requires d >= 2 (tails are only geometric at d=1)");
    for (int m = 0; m < P.M; ++m)
        if (!(P.u[m] > 0.0))
            throw std::invalid_argument(
                "tail_certificate: requires positive service rates");

    TailCertificate cert;
    std::vector<double> qtmax(q.L + 1, 0.0);
    for (int k = 0; k < P.K; ++k) {
        const std::vector<double> qt = dispatcher_view(q, k, P);
        for (int l = 0; l <= q.L; ++l) qtmax[l] = std::max(qtmax[l], qt[l]);
    }

    // Sufficient per-level inequality (allowing the fixed-point residual).
    for (int m = 0; m < P.M; ++m) {
        const double coef = P.lambda * P.xi / (P.v[m] * P.u[m]);
        for (int l = 0; l < q.L; ++l) {
            if (q.at(m, l + 1) > coef * detail::ipow(qtmax[l], P.d) + 1e-8) {
                cert.violating_level = l + 1;
                return cert;
            }
        }
    }

    cert.l_m.assign(P.M, -1);
    cert.a_m.assign(P.M, 0.0);
    cert.b_m.assign(P.M, 0.0);
    double cmax = 0.0;
    for (int m = 0; m < P.M; ++m)
        cmax = std::max(cmax, P.lambda * P.xi / (P.v[m] * P.u[m]));
    for (int m = 0; m < P.M; ++m) {
        const double coef = P.lambda * P.xi / (P.v[m] * P.u[m]);
        for (int l0 = 1; l0 <= q.L; ++l0) {
            const double c = detail::ipow(qtmax[l0 - 1], P.d - 1) * cmax;
            if (c < 1.0 && c > 0.0) {
                cert.l_m[m] = l0 + 1;
                cert.a_m[m] = std::exp(std::log(c) / std::pow(P.d, l0));
                cert.b_m[m] = coef * detail::ipow(qtmax[l0 - 1], P.d);
                break;
            }
            if (c == 0.0) {  // tail already identically zero from here on
                cert.l_m[m] = l0 + 1;
                cert.a_m[m] = 0.5;
                cert.b_m[m] = coef * detail::ipow(qtmax[l0 - 1], P.d);
                break;
            }
        }
        if (cert.l_m[m] < 0) return cert;  // no contraction level found
    }

    // Numerical verification of the envelope on retained levels.
    for (int m = 0; m < P.M; ++m) {
        for (int l = cert.l_m[m]; l <= q.L; ++l) {
            const double val = q.at(m, l);
            if (val <= 1e-300) break;  // below meaningful precision
            const double log_bound =
                std::log(cert.b_m[m]) + std::pow(P.d, l) * std::log(cert.a_m[m]);
            if (std::log(val) > log_bound + 1e-9) {
                cert.violating_level = l;
                return cert;
            }
        }
    }

    // Deep-tail decay diagnostic: slope of log(-log qtmax(l)) where the tail
    // is small enough for the asymptotic regime but still representable.
    {
        std::vector<double> xs, ys;
        for (int l = 1; l <= q.L; ++l) {
            if (qtmax[l] > 1e-3 || qtmax[l] < 1e-200) continue;
            xs.push_back(l);
            ys.push_back(std::log(-std::log(qtmax[l])));
        }
        cert.slope_points = static_cast<int>(xs.size());
        if (xs.size() >= 2) {
            double mx = 0.0, my = 0.0;
            for (size_t s = 0; s < xs.size(); ++s) {
                mx += xs[s];
                my += ys[s];
            }
            mx /= xs.size();
            my /= ys.size();
            double sxy = 0.0, sxx = 0.0;
            for (size_t s = 0; s < xs.size(); ++s) {
                sxy += (xs[s] - mx) * (ys[s] - my);
                sxx += (xs[s] - mx) * (xs[s] - mx);
            }
            cert.slope = sxx > 0.0 ? sxy / sxx : 0.0;
        }
    }

    cert.exists = true;
    return cert;
}

}  // namespace jsqd
