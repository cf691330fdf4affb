#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jsqd/distributions.hpp"
#include "jsqd/graph.hpp"
#include "jsqd/occupancy.hpp"
#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"
#include "jsqd/simulator.hpp"

namespace jsqd {

struct CoupledResult {
    Trajectory local;                  // the neighborhood-sampling system
    Trajectory global;                 // the pooled-sampling system
    std::vector<double> mismatch_t;    // snapshot grid
    std::vector<long long> mismatch;   // cumulative mismatched arrivals, left limits
    long long mismatches = 0;          // final count
    long long bound_checks = 0;        // events at which the bound was verified
    SimCounters local_counters;
    SimCounters global_counters;
};

namespace detail {

// One system's mutable state inside the coupled run. Servers of each type are
// kept sorted by (queue length, id) so that rank-indexed departure clocks and
// uniform within-class picks are O(log) lookups plus local bubbling.
struct CoupledSide {
    std::vector<int> qlen;
    std::vector<std::vector<int>> order;  // per type, ids sorted by (len, id)
    std::vector<int> pos;                 // id -> index within its type's order
    std::vector<std::vector<long long>> count;  // per type, exact level counts

    void init(const CompatibilityGraph& g, int M, const std::vector<int>& q0,
              int cap) {
        qlen = q0;
        pos.assign(g.N, -1);
        order.assign(M, {});
        count.assign(M, std::vector<long long>(cap, 0));
        for (int j = 0; j < g.N; ++j) order[g.stype[j]].push_back(j);
        for (int m = 0; m < M; ++m) {
            std::sort(order[m].begin(), order[m].end(), [&](int a, int b) {
                return std::pair(qlen[a], a) < std::pair(qlen[b], b);
            });
            for (size_t n = 0; n < order[m].size(); ++n) pos[order[m][n]] = n;
            for (int j : order[m]) ++count[m][qlen[j]];
        }
    }

    void widen(int cap) {
        for (auto& c : count) c.resize(cap, 0);
    }

    void bubble_right(int m, int j) {
        auto& ord = order[m];
        int idx = pos[j];
        while (idx + 1 < static_cast<int>(ord.size())) {
            const int nj = ord[idx + 1];
            if (std::pair(qlen[nj], nj) < std::pair(qlen[j], j)) {
                std::swap(ord[idx], ord[idx + 1]);
                pos[nj] = idx;
                pos[j] = ++idx;
            } else {
                break;
            }
        }
    }

    void bubble_left(int m, int j) {
        auto& ord = order[m];
        int idx = pos[j];
        while (idx > 0) {
            const int nj = ord[idx - 1];
            if (std::pair(qlen[j], j) < std::pair(qlen[nj], nj)) {
                std::swap(ord[idx], ord[idx - 1]);
                pos[nj] = idx;
                pos[j] = --idx;
            } else {
                break;
            }
        }
    }

    void add_task(int m, int j) {
        --count[m][qlen[j]];
        ++qlen[j];
        ++count[m][qlen[j]];
        bubble_right(m, j);
    }

    void remove_task(int m, int j) {
        --count[m][qlen[j]];
        --qlen[j];
        ++count[m][qlen[j]];
        bubble_left(m, j);
    }

    // Uniform server of type m at exactly length l, via the sorted order.
    int pick_in_class(int m, int l, Rng& rng) const {
        const auto& ord = order[m];
        const auto lo = std::lower_bound(
            ord.begin(), ord.end(), l,
            [&](int id, int len) { return qlen[id] < len; });
        const auto hi = std::upper_bound(
            ord.begin(), ord.end(), l,
            [&](int len, int id) { return len < qlen[id]; });
        if (lo == hi)
            throw std::logic_error("coupled run: drawn class holds no server");
        return *(lo + uniform_below(rng, static_cast<std::uint64_t>(hi - lo)));
    }
};

// First flat class index at which the running sum of positive entries
// exceeds z; falls back to the last positive entry when rounding makes the
// sums fall short. Throws if nothing is positive.
inline int walk_first_exceed(const std::vector<double>& mass, double z) {
    double acc = 0.0;
    int last_positive = -1;
    for (size_t idx = 0; idx < mass.size(); ++idx) {
        if (mass[idx] <= 0.0) continue;
        last_positive = static_cast<int>(idx);
        acc += mass[idx];
        if (acc > z) return last_positive;
    }
    if (last_positive < 0)
        throw std::logic_error("coupled run: decision pmf carries no mass");
    return last_positive;
}

}  // namespace detail

// Runs the neighborhood-sampling and pooled-sampling systems on one
// probability space: identical initial lengths, shared arrival epochs,
// a single uniform per arrival split through the maximal-coupling
// decomposition of the two (type, level) decision laws, and shared
// per-(type, rank) potential departure clocks (rank = position in the
// (length, id) order, so both systems thin the same exponential stream).
// After every event the integer inequality
//     sum_{m,l>=1} | tail_local(m,l) - tail_global(m,l) |  <=  2 * mismatches
// is asserted; a violation throws with a trace of recent events.
inline CoupledResult run_coupled(const CompatibilityGraph& g,
                                 const SystemParams& P, const InitMatrix& init,
                                 double horizon, double snapshot_dt,
                                 std::uint64_t seed,
                                 const std::string& params_hash = "") {
    if (!(horizon > 0.0) || !(snapshot_dt > 0.0))
        throw std::invalid_argument("run_coupled: horizon and snapshot_dt must be > 0");
    if (g.N < P.d)
        throw std::invalid_argument("run_coupled: fewer than d servers");
    check_init_matrix(init, P.M);

    std::vector<long long> n_m(P.M, 0);
    for (int j = 0; j < g.N; ++j) ++n_m[g.stype[j]];
    for (int m = 0; m < P.M; ++m)
        if (n_m[m] == 0)
            throw std::invalid_argument(
                "run_coupled: every server type must have at least one server");
    std::vector<int> type_offset(P.M + 1, 0);
    for (int m = 0; m < P.M; ++m)
        type_offset[m + 1] = type_offset[m] + static_cast<int>(n_m[m]);

    CoupledResult out;
    for (Trajectory* t : {&out.local, &out.global}) {
        t->N = g.N;
        t->seed = seed;
        t->params_hash = params_hash;
    }
    out.local.policy = "jsq_d";
    out.global.policy = "jsq_d_global_pool";

    Rng rng(seed);
    const std::vector<int> q0 = sample_initial_lengths(g, init, rng);
    int cap = 2;
    for (int x : q0) cap = std::max(cap, x + 2);

    detail::CoupledSide A, B;
    A.init(g, P.M, q0, cap);
    B.init(g, P.M, q0, cap);

    detail::EventQueue queue;
    if (P.lambda > 0.0)
        for (int i = 0; i < g.W; ++i) queue.push({exp_draw(rng, P.lambda), 0, i});
    for (int m = 0; m < P.M; ++m)
        if (P.u[m] > 0.0)
            for (int n = 0; n < n_m[m]; ++n)
                queue.push({exp_draw(rng, P.u[m]), 1, type_offset[m] + n});

    long long delta = 0;
    std::deque<std::string> trace;
    auto log_event = [&](const std::string& s) {
        trace.push_back(s);
        if (trace.size() > 24) trace.pop_front();
    };
    auto check_bound = [&]() {
        long long dist = 0;
        for (int m = 0; m < P.M; ++m) {
            long long ta = 0, tb = 0;
            for (int l = cap - 1; l >= 1; --l) {
                ta += A.count[m][l];
                tb += B.count[m][l];
                dist += std::llabs(ta - tb);
            }
        }
        ++out.bound_checks;
        if (dist > 2 * delta) {
            std::string msg =
                "coupled run: occupancy distance " + std::to_string(dist) +
                " exceeds 2 * " + std::to_string(delta) + "; recent events:";
            for (const auto& s : trace) msg += "\n  " + s;
            throw std::logic_error(msg);
        }
    };

    long long snap_idx = 0;  // grid as idx * dt: no accumulation drift
    auto snapshot = [&](double at) {
        int max_len = 1;
        for (int x : A.qlen) max_len = std::max(max_len, x);
        out.local.times.push_back(at);
        out.local.snaps.push_back(
            empirical_occupancy(A.qlen, g.stype, P.M, max_len));
        max_len = 1;
        for (int x : B.qlen) max_len = std::max(max_len, x);
        out.global.times.push_back(at);
        out.global.snaps.push_back(
            empirical_occupancy(B.qlen, g.stype, P.M, max_len));
        out.mismatch_t.push_back(at);
        out.mismatch.push_back(delta);
    };
    auto flush_snaps_until = [&](double t) {
        for (;;) {
            const double at = static_cast<double>(snap_idx) * snapshot_dt;
            if (at > horizon + 1e-12 || at > t) break;
            snapshot(std::min(at, horizon));
            ++snap_idx;
        }
    };

    char buf[160];
    std::vector<long long> local_cnt;
    while (!queue.empty()) {
        const detail::Event ev = queue.top();
        if (ev.t > horizon) break;
        queue.pop();
        flush_snaps_until(ev.t);

        if (ev.kind == 0) {
            const int i = ev.id;
            const int k = g.dtype[i];
            ++out.local_counters.arrivals;
            ++out.global_counters.arrivals;
            const int L = cap - 1;
            const size_t classes = static_cast<size_t>(P.M) * (L + 1);

            // Pooled-side decision law from its current exact counts.
            ClassPmf xB(P.M, L);
            for (int m = 0; m < P.M; ++m) {
                const double coef =
                    P.v[m] * P.p_at(k, m) / (P.delta[k] * static_cast<double>(n_m[m]));
                for (int l = 0; l <= L; ++l)
                    xB.at(m, l) = coef * static_cast<double>(B.count[m][l]);
            }
            const std::vector<long long> pool = largest_remainder(xB.mass, g.N);
            ClassPmf pool_pmf(P.M, L);
            for (size_t c = 0; c < classes; ++c)
                pool_pmf.mass[c] =
                    static_cast<double>(pool[c]) / static_cast<double>(g.N);
            const ClassPmf pmfB = assignment_class_pmf(pool_pmf, g.N, P.d);

            const double U = uniform01(rng);
            const int deg = static_cast<int>(g.adj[i].size());
            int clsA = -1, clsB = -1;
            if (deg == 0) {
                // No local route: the local system drops, the pooled system
                // still assigns. Always a mismatched arrival.
                clsB = detail::walk_first_exceed(pmfB.mass, U);
                ++out.local_counters.dropped;
            } else {
                // Local decision law: on full neighborhoods the same drawn-slot
                // law as the pool at pool size deg, otherwise one uniform
                // neighbor, so class mass is count / deg.
                local_cnt.assign(classes, 0);
                for (int j : g.adj[i])
                    ++local_cnt[static_cast<size_t>(g.stype[j]) * (L + 1) +
                                A.qlen[j]];
                ClassPmf base(P.M, L);
                for (size_t c = 0; c < classes; ++c)
                    base.mass[c] =
                        static_cast<double>(local_cnt[c]) / static_cast<double>(deg);
                const ClassPmf pmfA =
                    deg >= P.d ? assignment_class_pmf(base, deg, P.d) : base;

                double common = 0.0;
                std::vector<double> shared(classes);
                for (size_t c = 0; c < classes; ++c) {
                    shared[c] = std::min(pmfA.mass[c], pmfB.mass[c]);
                    common += shared[c];
                }
                if (U < common) {
                    clsA = clsB = detail::walk_first_exceed(shared, U);
                } else {
                    std::vector<double> residA(classes), residB(classes);
                    double resid_total = 0.0;
                    for (size_t c = 0; c < classes; ++c) {
                        residA[c] = std::max(0.0, pmfA.mass[c] - pmfB.mass[c]);
                        residB[c] = std::max(0.0, pmfB.mass[c] - pmfA.mass[c]);
                        resid_total += residA[c];
                    }
                    if (resid_total <= 1e-12) {
                        // The laws agree to rounding; treat as a shared draw.
                        clsA = clsB = detail::walk_first_exceed(shared, common);
                    } else {
                        const double z = U - common;
                        clsA = detail::walk_first_exceed(residA, z);
                        clsB = detail::walk_first_exceed(residB, z);
                    }
                }
                const int mA = clsA / (L + 1), lA = clsA % (L + 1);
                std::vector<int> cand;
                for (int j : g.adj[i])
                    if (g.stype[j] == mA && A.qlen[j] == lA) cand.push_back(j);
                if (cand.empty())
                    throw std::logic_error(
                        "coupled run: local class has no neighbor behind it");
                const int jA = cand[uniform_below(rng, cand.size())];
                if (A.qlen[jA] + 2 > cap) {
                    cap = A.qlen[jA] + 2;
                    A.widen(cap);
                    B.widen(cap);
                }
                A.add_task(mA, jA);
            }

            const int mB = clsB / (L + 1), lB = clsB % (L + 1);
            const int jB = B.pick_in_class(mB, lB, rng);
            if (B.qlen[jB] + 2 > cap) {
                cap = B.qlen[jB] + 2;
                A.widen(cap);
                B.widen(cap);
            }
            B.add_task(mB, jB);

            if (clsA != clsB) ++delta;

            queue.push({ev.t + exp_draw(rng, P.lambda), 0, i});
            std::snprintf(buf, sizeof buf,
                          "t=%.6f arrival disp=%d classA=%d classB=%d delta=%lld",
                          ev.t, i, clsA, clsB, delta);
            log_event(buf);
        } else {
            // Potential departure of the rank-n server of type m, thinned
            // independently in each system.
            const int m = static_cast<int>(
                std::upper_bound(type_offset.begin(), type_offset.end(), ev.id) -
                type_offset.begin()) - 1;
            const int n = ev.id - type_offset[m];
            const int jA = A.order[m][n];
            const int jB = B.order[m][n];
            if (A.qlen[jA] > 0) {
                A.remove_task(m, jA);
                ++out.local_counters.departures;
            }
            if (B.qlen[jB] > 0) {
                B.remove_task(m, jB);
                ++out.global_counters.departures;
            }
            queue.push({ev.t + exp_draw(rng, P.u[m]), 1, ev.id});
            std::snprintf(buf, sizeof buf,
                          "t=%.6f departure type=%d rank=%d lenA=%d lenB=%d",
                          ev.t, m, n, A.qlen[jA], B.qlen[jB]);
            log_event(buf);
        }
        check_bound();
    }
    flush_snaps_until(horizon + 2e-12);  // slack so the endpoint always lands
    out.mismatches = delta;
    return out;
}

}  // namespace jsqd
