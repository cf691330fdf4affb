#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/distributions.hpp"
#include "jsqd/graph.hpp"
#include "jsqd/occupancy.hpp"
#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"
#include "jsqd/stability.hpp"

namespace jsqd {

struct SimCounters {
    long long arrivals = 0;    // all arrival events, routed or not
    long long departures = 0;
    long long dropped = 0;     // arrivals at dispatchers with no neighbors
};

// Time-indexed occupancy snapshots of one run.
struct Trajectory {
    int N = 0;
    std::uint64_t seed = 0;
    std::string policy;
    std::string params_hash;
    std::vector<double> times;
    std::vector<OccupancyVector> snaps;
};

// Per-type initial queue-length pmfs: row m gives P(initial length = l) for
// l = 0..columns-1. An empty matrix means every queue starts empty.
using InitMatrix = std::vector<std::vector<double>>;

inline void check_init_matrix(const InitMatrix& init, int M) {
    if (init.empty()) return;
    if (static_cast<int>(init.size()) != M)
        throw std::invalid_argument("initial matrix must have one row per server type");
    for (const auto& row : init) {
        double s = 0.0;
        for (double x : row) {
            if (!(x >= 0.0)) throw std::invalid_argument("initial pmf entries must be >= 0");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("initial pmf rows must sum to 1");
    }
}

// Draws initial queue lengths, one inverse-cdf lookup per server in id order.
inline std::vector<int> sample_initial_lengths(const CompatibilityGraph& g,
                                               const InitMatrix& init, Rng& rng) {
    std::vector<int> qlen(g.N, 0);
    if (init.empty()) return qlen;
    for (int j = 0; j < g.N; ++j) {
        const auto& row = init[g.stype[j]];
        double u = uniform01(rng), acc = 0.0;
        int pick = static_cast<int>(row.size()) - 1;
        for (size_t l = 0; l < row.size(); ++l) {
            acc += row[l];
            if (u < acc) { pick = static_cast<int>(l); break; }
        }
        qlen[j] = pick;
    }
    return qlen;
}

// JSQ(d) routing decision for one arrival: sample d distinct neighbors
// (uniformly, without replacement) and return the shortest, ties uniform.
// Neighborhoods smaller than d fall back to one uniform neighbor; an empty
// neighborhood returns -1 (caller drops the task). RNG use: d draws for the
// sample (1 for the small-neighborhood branch), plus one extra draw only when
// the minimum is tied.
inline int jsq_d_assign(const std::vector<int>& qlen,
                        const std::vector<int>& neighbors, int d, Rng& rng) {
    const int deg = static_cast<int>(neighbors.size());
    if (deg == 0) return -1;
    if (deg < d) return neighbors[uniform_below(rng, deg)];

    static thread_local std::vector<int> picks;
    sample_distinct(rng, deg, d, picks);
    int best_len = qlen[neighbors[picks[0]]];
    int ties = 1;
    int chosen = neighbors[picks[0]];
    for (int t = 1; t < d; ++t) {
        const int j = neighbors[picks[t]];
        if (qlen[j] < best_len) {
            best_len = qlen[j];
            ties = 1;
            chosen = j;
        } else if (qlen[j] == best_len) {
            ++ties;
        }
    }
    if (ties > 1) {
        long long want = static_cast<long long>(uniform_below(rng, ties));
        for (int t = 0; t < d; ++t) {
            const int j = neighbors[picks[t]];
            if (qlen[j] == best_len && want-- == 0) { chosen = j; break; }
        }
    }
    return chosen;
}

namespace detail {

struct Event {
    double t = 0.0;
    int kind = 0;  // 0 = arrival, 1 = departure; part of the tie order
    int id = 0;
    bool operator>(const Event& o) const {
        if (t != o.t) return t > o.t;
        if (kind != o.kind) return kind > o.kind;
        return id > o.id;
    }
};

using EventQueue =
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>>;

}  // namespace detail

struct RunResult {
    Trajectory traj;
    SimCounters counters;
    std::vector<int> final_qlen;
};

// Event-driven simulation under local JSQ(d): Poisson(lambda) arrivals per
// dispatcher, exponential(u_m) service at every busy server. Exactly one
// pending departure event exists per busy server (regenerated after each
// completion; memorylessness makes this exact). Snapshots are left limits on
// the uniform grid k*snapshot_dt. Deterministic given (graph, params, seed);
// the RNG order per arrival is: routing draws, new departure clock if the
// server was idle, next interarrival.
inline RunResult run_jsq_d(const CompatibilityGraph& g, const SystemParams& P,
                           const InitMatrix& init, double horizon,
                           double snapshot_dt, std::uint64_t seed,
                           const std::string& params_hash = "") {
    if (!(horizon > 0.0)) throw std::invalid_argument("run_jsq_d: horizon must be > 0");
    if (!(snapshot_dt > 0.0))
        throw std::invalid_argument("run_jsq_d: snapshot_dt must be > 0");
    check_init_matrix(init, P.M);

    RunResult out;
    out.traj.N = g.N;
    out.traj.seed = seed;
    out.traj.policy = "jsq_d";
    out.traj.params_hash = params_hash;

    Rng rng(seed);
    std::vector<int> qlen = sample_initial_lengths(g, init, rng);

    detail::EventQueue queue;
    if (P.lambda > 0.0)
        for (int i = 0; i < g.W; ++i)
            queue.push({exp_draw(rng, P.lambda), 0, i});
    for (int j = 0; j < g.N; ++j)
        if (qlen[j] > 0 && P.u[g.stype[j]] > 0.0)
            queue.push({exp_draw(rng, P.u[g.stype[j]]), 1, j});

    long long snap_idx = 0;  // grid as idx * dt: no accumulation drift
    auto snapshot = [&](double at) {
        int max_len = 1;
        for (int x : qlen) max_len = std::max(max_len, x);
        out.traj.times.push_back(at);
        out.traj.snaps.push_back(empirical_occupancy(qlen, g.stype, P.M, max_len));
    };
    auto flush_snaps_until = [&](double t) {
        for (;;) {
            const double at = static_cast<double>(snap_idx) * snapshot_dt;
            if (at > horizon + 1e-12 || at > t) break;
            snapshot(std::min(at, horizon));
            ++snap_idx;
        }
    };

    while (!queue.empty()) {
        const detail::Event ev = queue.top();
        if (ev.t > horizon) break;
        queue.pop();
        flush_snaps_until(ev.t);  // snapshots are left limits
        if (ev.kind == 0) {
            ++out.counters.arrivals;
            const int j = jsq_d_assign(qlen, g.adj[ev.id], P.d, rng);
            if (j < 0) {
                ++out.counters.dropped;
            } else {
                ++qlen[j];
                if (qlen[j] == 1 && P.u[g.stype[j]] > 0.0)
                    queue.push({ev.t + exp_draw(rng, P.u[g.stype[j]]), 1, j});
            }
            queue.push({ev.t + exp_draw(rng, P.lambda), 0, ev.id});
        } else {
            if (qlen[ev.id] <= 0)
                throw std::logic_error("run_jsq_d: departure from an idle server");
            --qlen[ev.id];
            ++out.counters.departures;
            if (qlen[ev.id] > 0)
                queue.push({ev.t + exp_draw(rng, P.u[g.stype[ev.id]]), 1, ev.id});
        }
    }
    flush_snaps_until(horizon + 2e-12);  // slack so the endpoint always lands
    out.final_qlen = std::move(qlen);
    return out;
}

// Distribution of the (type, level) class that wins an arrival when d slots
// are drawn without replacement from a pool of `pool_size` slots carrying the
// class masses `dist`, the task going to the lowest drawn level, type ties at
// that level resolved proportionally to drawn counts:
//   p(m,l) = sum_{r=1..d} sum_{r1=1..r} (r1/r)
//            * C(S x(m,l), r1) * C(S (x(.,l)-x(m,l)), r-r1) * C(S T(l), d-r)
//            / C(S, d),
// with S = pool_size, x(.,l) the level-l mass and T(l) the mass strictly
// below-priority (levels > l); C is the generalized binomial. Near-integer
// slot masses are snapped so integer pools evaluate in exact combinatorics.
// For non-integral pools the truncated C(.,.) loses a sliver of mass (the
// formula's own blind spot); the output is renormalized so it is always a pmf.
inline ClassPmf assignment_class_pmf(const ClassPmf& dist, double pool_size,
                                     int d) {
    if (!(pool_size > 0.0) || pool_size < d)
        throw std::invalid_argument(
            "assignment_class_pmf: pool must hold at least d slots");
    const int M = dist.M, L = dist.L;
    auto slots = [&](double mass) {
        double z = mass * pool_size;
        const double r = std::nearbyint(z);
        if (std::abs(z - r) < 1e-9 * std::max(1.0, std::abs(z))) z = r;
        return z;
    };

    std::vector<double> level_mass(L + 1, 0.0);
    for (int m = 0; m < M; ++m)
        for (int l = 0; l <= L; ++l) level_mass[l] += dist.at(m, l);
    std::vector<double> above(L + 2, 0.0);  // mass at levels strictly greater
    for (int l = L; l >= 0; --l) above[l] = above[l + 1] + level_mass[l];

    const double denom = gbinom(pool_size, d);
    ClassPmf out(M, L);
    for (int l = 0; l <= L; ++l) {
        const double worse = slots(above[l + 1]);
        for (int m = 0; m < M; ++m) {
            const double own = dist.at(m, l);
            if (own <= 0.0) continue;
            const double mine = slots(own);
            const double peers = slots(level_mass[l] - own);
            double p = 0.0;
            for (int r = 1; r <= d; ++r) {
                const double rest = gbinom(worse, d - r);
                if (rest == 0.0) continue;
                for (int r1 = 1; r1 <= r; ++r1) {
                    const double a = gbinom(mine, r1);
                    if (a == 0.0) break;  // larger r1 only gets emptier
                    p += static_cast<double>(r1) / r * a *
                         gbinom(peers, r - r1) * rest;
                }
            }
            out.at(m, l) = p / denom;
        }
    }
    const double total = out.total();
    if (std::abs(total - 1.0) > 1e-9) {
        if (!(total > 0.0))
            throw std::invalid_argument(
                "assignment_class_pmf: input carries no drawable mass");
        for (double& x : out.mass) x /= total;
    }
    return out;
}

struct PoolDiagnostics {
    long long ghost_fallbacks = 0;  // chosen class had no real server (rounding)
};

struct PoolAssignment {
    int server = -1;
    int m = -1;  // chosen class
    int l = -1;
};

// Pooled routing decision: instead of its own neighborhood, the dispatcher
// draws d distinct slots from a pool of N pseudo-servers allocated to
// (type, level) classes by largest-remainder rounding of N times the weighted
// global class distribution of its type. The lowest drawn level wins; the
// type is picked uniformly among the drawn slots at that level; a uniformly
// chosen real server of that class receives the task. If rounding invented a
// slot with no real server behind it (never observed; kept for safety), the
// nearest occupied level of the same type is used and the event is counted.
inline PoolAssignment global_pool_assign(const std::vector<int>& qlen,
                                         const std::vector<int>& stype,
                                         const SystemParams& P, int k, Rng& rng,
                                         PoolDiagnostics* diag = nullptr) {
    const int N = static_cast<int>(qlen.size());
    if (N < P.d)
        throw std::invalid_argument("global_pool_assign: fewer than d servers");
    int max_len = 0;
    for (int x : qlen) max_len = std::max(max_len, x);
    const OccupancyVector occ = empirical_occupancy(qlen, stype, P.M, max_len);
    const ClassPmf x = weighted_global_pmf(occ, k, P);
    const std::vector<long long> pool = largest_remainder(x.mass, N);

    std::vector<long long> prefix(pool.size() + 1, 0);
    for (size_t c = 0; c < pool.size(); ++c) prefix[c + 1] = prefix[c] + pool[c];

    static thread_local std::vector<int> picks;
    sample_distinct(rng, static_cast<std::uint64_t>(N), P.d, picks);

    const int Lp = x.L;
    int best_level = Lp + 1;
    static thread_local std::vector<int> drawn_classes;
    drawn_classes.clear();
    for (int s : picks) {
        const auto it =
            std::upper_bound(prefix.begin(), prefix.end(), static_cast<long long>(s));
        const int cls = static_cast<int>(it - prefix.begin()) - 1;
        drawn_classes.push_back(cls);
        best_level = std::min(best_level, cls % (Lp + 1));
    }
    // Uniform slot among the winning-level draws realizes the proportional
    // type rule.
    static thread_local std::vector<int> winners;
    winners.clear();
    for (int cls : drawn_classes)
        if (cls % (Lp + 1) == best_level) winners.push_back(cls);
    const int cls = winners[uniform_below(rng, winners.size())];
    PoolAssignment res;
    res.m = cls / (Lp + 1);
    res.l = best_level;

    auto collect = [&](int level) {
        std::vector<int> ids;
        for (int j = 0; j < N; ++j)
            if (stype[j] == res.m && qlen[j] == level) ids.push_back(j);
        return ids;
    };
    std::vector<int> candidates = collect(res.l);
    if (candidates.empty()) {
        if (diag) ++diag->ghost_fallbacks;
        for (int off = 1; candidates.empty() && off <= max_len + 1; ++off) {
            if (res.l - off >= 0) candidates = collect(res.l - off);
            if (candidates.empty() && res.l + off <= max_len)
                candidates = collect(res.l + off);
        }
        if (candidates.empty())
            throw std::logic_error(
                "global_pool_assign: pool class has no servers of its type");
    }
    res.server = candidates[uniform_below(rng, candidates.size())];
    return res;
}

// Long-run occupancy estimate: time-averaged occupancy over
// [warmup, warmup + window] starting from an empty system, with batch-means
// half-widths (10 batches, Student-t 97.5%). Also reports the v-weighted tail
// profile against the geometric reference ((1+rho)/2)^l, rho being the worst
// subcritical margin — an informational shape check, not a fitted bound.
struct SteadyStateResult {
    OccupancyVector mean;
    std::vector<double> half_width;      // same layout as mean.q
    int batches = 10;
    bool subcritical = true;
    std::vector<double> weighted_tail;   // sum_m v_m mean(m,l), per level
    std::vector<double> reference_tail;  // ((1+rho)/2)^l, same indexing
};

inline SteadyStateResult steady_state_estimate(const CompatibilityGraph& g,
                                               const SystemParams& P,
                                               double warmup, double window,
                                               std::uint64_t seed) {
    if (!(warmup >= 0.0) || !(window > 0.0))
        throw std::invalid_argument("steady_state_estimate: bad averaging window");
    const SubcriticalResult sub = subcritical_margins(P);

    Rng rng(seed);
    std::vector<int> qlen(g.N, 0);
    std::vector<long long> n_m(P.M, 0);
    for (int j = 0; j < g.N; ++j) ++n_m[g.stype[j]];

    detail::EventQueue queue;
    if (P.lambda > 0.0)
        for (int i = 0; i < g.W; ++i) queue.push({exp_draw(rng, P.lambda), 0, i});

    const int batches = 10;
    const double t_end = warmup + window;
    const double batch_len = window / batches;
    // Exact per-(type, level) counts; the accumulators integrate them in time.
    int cap = 8;
    std::vector<std::vector<long long>> count(P.M, std::vector<long long>(cap, 0));
    for (int m = 0; m < P.M; ++m) count[m][0] = n_m[m];
    std::vector<std::vector<double>> acc(
        batches, std::vector<double>(static_cast<size_t>(P.M) * cap, 0.0));
    auto widen = [&](int need) {
        if (need < cap) return;
        const int wider = std::max(need + 1, cap * 2);
        for (int m = 0; m < P.M; ++m) count[m].resize(wider, 0);
        for (auto& a : acc) {
            std::vector<double> na(static_cast<size_t>(P.M) * wider, 0.0);
            for (int m = 0; m < P.M; ++m)
                for (int l = 0; l < cap; ++l)
                    na[static_cast<size_t>(m) * wider + l] =
                        a[static_cast<size_t>(m) * cap + l];
            a = std::move(na);
        }
        cap = wider;
    };

    double t = 0.0;
    auto accumulate = [&](double from, double to) {
        // Split [from, to) across batch boundaries.
        while (to > from + 1e-15) {
            if (from >= t_end) return;
            const double rel = std::max(0.0, from - warmup);
            const int b = std::min(batches - 1, static_cast<int>(rel / batch_len));
            const double b_end = warmup + (b + 1) * batch_len;
            const double upto = std::min({to, b_end, t_end});
            if (from >= warmup && upto > from) {
                const double dt = upto - from;
                for (int m = 0; m < P.M; ++m)
                    for (int l = 0; l < cap; ++l)
                        acc[b][static_cast<size_t>(m) * cap + l] +=
                            dt * static_cast<double>(count[m][l]);
            }
            from = upto;
        }
    };

    while (!queue.empty()) {
        const detail::Event ev = queue.top();
        if (ev.t > t_end) break;
        queue.pop();
        accumulate(std::max(t, warmup), ev.t);
        t = ev.t;
        if (ev.kind == 0) {
            const int j = jsq_d_assign(qlen, g.adj[ev.id], P.d, rng);
            if (j >= 0) {
                const int m = g.stype[j];
                widen(qlen[j] + 1);
                --count[m][qlen[j]];
                ++qlen[j];
                ++count[m][qlen[j]];
                if (qlen[j] == 1 && P.u[m] > 0.0)
                    queue.push({ev.t + exp_draw(rng, P.u[m]), 1, j});
            }
            queue.push({ev.t + exp_draw(rng, P.lambda), 0, ev.id});
        } else {
            if (qlen[ev.id] <= 0)
                throw std::logic_error(
                    "steady_state_estimate: departure from an idle server");
            const int m = g.stype[ev.id];
            --count[m][qlen[ev.id]];
            --qlen[ev.id];
            ++count[m][qlen[ev.id]];
            if (qlen[ev.id] > 0)
                queue.push({ev.t + exp_draw(rng, P.u[m]), 1, ev.id});
        }
    }
    accumulate(std::max(t, warmup), t_end);

    // Batch means of the occupancy (tail fractions), then mean and spread.
    SteadyStateResult res;
    res.subcritical = sub.subcritical;
    const int L = cap - 1;
    res.mean = OccupancyVector(P.M, L);
    res.half_width.assign(res.mean.q.size(), 0.0);
    std::vector<std::vector<double>> batch_q(
        batches, std::vector<double>(res.mean.q.size(), 0.0));
    for (int b = 0; b < batches; ++b) {
        for (int m = 0; m < P.M; ++m) {
            double tail = 0.0;
            for (int l = L; l >= 1; --l) {
                tail += acc[b][static_cast<size_t>(m) * cap + l];
                batch_q[b][static_cast<size_t>(m) * (L + 1) + l] =
                    n_m[m] > 0 ? tail / (batch_len * static_cast<double>(n_m[m]))
                               : 0.0;
            }
            batch_q[b][static_cast<size_t>(m) * (L + 1)] = 1.0;
        }
    }
    const double t_quantile = 2.262;  // Student t, 9 dof, 97.5%
    for (size_t s = 0; s < res.mean.q.size(); ++s) {
        double mean = 0.0;
        for (int b = 0; b < batches; ++b) mean += batch_q[b][s];
        mean /= batches;
        double var = 0.0;
        for (int b = 0; b < batches; ++b)
            var += (batch_q[b][s] - mean) * (batch_q[b][s] - mean);
        var /= (batches - 1);
        res.mean.q[s] = mean;
        res.half_width[s] = t_quantile * std::sqrt(var / batches);
    }
    for (int m = 0; m < P.M; ++m) res.mean.at(m, 0) = 1.0;

    res.weighted_tail.assign(L + 1, 0.0);
    res.reference_tail.assign(L + 1, 0.0);
    const double rho = std::min(sub.worst, 1.0);
    for (int l = 0; l <= L; ++l) {
        for (int m = 0; m < P.M; ++m)
            res.weighted_tail[l] += P.v[m] * res.mean.at(m, l);
        res.reference_tail[l] = std::pow(0.5 * (1.0 + rho), l);
    }
    return res;
}

}  // namespace jsqd
