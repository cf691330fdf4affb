#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"

namespace jsqd {

// Bipartite compatibility structure: W dispatchers on one side, N servers on
// the other, an edge meaning "this dispatcher may route to this server".
struct CompatibilityGraph {
    int N = 0, W = 0, K = 0, M = 0;
    std::vector<int> stype;              // server j -> type
    std::vector<int> dtype;              // dispatcher i -> type
    std::vector<std::vector<int>> adj;   // dispatcher -> sorted server ids
    std::vector<std::vector<int>> radj;  // server -> sorted dispatcher ids

    long long edge_count() const {
        long long e = 0;
        for (const auto& a : adj) e += static_cast<long long>(a.size());
        return e;
    }

    void build_reverse() {
        radj.assign(N, {});
        for (int i = 0; i < W; ++i)
            for (int j : adj[i]) radj[j].push_back(i);
        // adj rows are visited in increasing i, so radj rows come out sorted.
    }
};

// Apportions `total` items to shares `frac` (not necessarily normalized to 1
// against total*frac being integral): floor first, then hand the remaining
// items to the largest fractional parts, ties to the lowest index. The result
// sums to exactly `total`. Near-integer products are snapped first so that
// counts like 1000 * 0.3 do not lose an item to floating-point dust.
inline std::vector<long long> largest_remainder(const std::vector<double>& frac,
                                                long long total) {
    const size_t n = frac.size();
    std::vector<long long> out(n, 0);
    std::vector<double> rem(n, 0.0);
    long long assigned = 0;
    for (size_t i = 0; i < n; ++i) {
        double x = frac[i] * static_cast<double>(total);
        const double r = std::nearbyint(x);
        if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) x = r;
        const double f = std::floor(x);
        out[i] = static_cast<long long>(f);
        rem[i] = x - f;
        assigned += out[i];
    }
    long long leftover = total - assigned;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return rem[a] > rem[b];  // stable: ties keep the lower index first
    });
    for (size_t t = 0; leftover > 0 && t < n; ++t, --leftover) ++out[order[t]];
    // leftover < 0 cannot happen for pmf-like input; guard against caller abuse.
    for (size_t t = n; leftover < 0 && t-- > 0;) {
        if (out[order[t]] > 0) { --out[order[t]]; ++leftover; }
    }
    return out;
}

namespace detail {
// Type labels in contiguous blocks: counts[0] items of type 0, then type 1, ...
inline std::vector<int> block_types(const std::vector<long long>& counts) {
    std::vector<int> t;
    for (size_t m = 0; m < counts.size(); ++m)
        t.insert(t.end(), static_cast<size_t>(counts[m]), static_cast<int>(m));
    return t;
}
}  // namespace detail

// Samples the random bipartite graph in which dispatcher i of type k and
// server j of type m share an edge independently with probability p_{k,m}.
// Server counts per type are the largest-remainder apportionment of N*v;
// dispatcher count is W = round(xi*N), apportioned by w the same way.
// Deterministic given (params, N, seed).
inline CompatibilityGraph sample_irg(int N, const SystemParams& P,
                                     std::uint64_t seed) {
    if (N < 1) throw std::invalid_argument("sample_irg: N must be >= 1");
    CompatibilityGraph g;
    g.N = N;
    g.W = static_cast<int>(std::llround(P.xi * N));
    g.K = P.K;
    g.M = P.M;
    g.stype = detail::block_types(largest_remainder(P.v, N));
    g.dtype = detail::block_types(largest_remainder(P.w, g.W));
    g.adj.assign(g.W, {});
    Rng rng(seed);
    for (int i = 0; i < g.W; ++i) {
        const int k = g.dtype[i];
        for (int j = 0; j < N; ++j) {
            if (uniform01(rng) < P.p_at(k, g.stype[j])) g.adj[i].push_back(j);
        }
    }
    g.build_reverse();
    return g;
}

// Every dispatcher compatible with every server (the unconstrained benchmark).
inline CompatibilityGraph complete_graph(int N, const SystemParams& P) {
    CompatibilityGraph g;
    g.N = N;
    g.W = static_cast<int>(std::llround(P.xi * N));
    g.K = P.K;
    g.M = P.M;
    g.stype = detail::block_types(largest_remainder(P.v, N));
    g.dtype = detail::block_types(largest_remainder(P.w, g.W));
    std::vector<int> all(N);
    std::iota(all.begin(), all.end(), 0);
    g.adj.assign(g.W, all);
    g.build_reverse();
    return g;
}

// Edge-density and degree-regularity audit per (dispatcher type, server type)
// block. For a well-behaved graph sequence the densities approach p_{k,m} and
// both degree ratios approach 1.
struct RegularityCell {
    double density = 0.0;       // |E(k,m)| / (|W_k| * |V_m|)
    double degree_ratio_w = 1.0;  // max_i deg(i -> V_m) / max(1, min_i ...)
    double degree_ratio_v = 1.0;  // max_j deg(W_k -> j) / max(1, min_j ...)
    bool flagged = false;         // empty class, or zero degree where p > 0
};

struct RegularityReport {
    int K = 0, M = 0;
    std::vector<RegularityCell> cell;            // row-major K x M
    std::vector<long long> low_degree_dispatchers;  // per k: count with deg < d
    const RegularityCell& at(int k, int m) const {
        return cell[static_cast<size_t>(k) * M + m];
    }
};

inline RegularityReport regularity_report(const CompatibilityGraph& g,
                                          const SystemParams& P) {
    if (g.W <= 0 || g.N <= 0)
        throw std::invalid_argument("regularity_report: empty graph");
    RegularityReport rep;
    rep.K = g.K;
    rep.M = g.M;
    rep.cell.assign(static_cast<size_t>(g.K) * g.M, {});
    rep.low_degree_dispatchers.assign(g.K, 0);

    std::vector<long long> wk(g.K, 0), vm(g.M, 0);
    for (int k : g.dtype) ++wk[k];
    for (int m : g.stype) ++vm[m];

    // deg_w[i][m]: edges from dispatcher i into type-m servers.
    std::vector<long long> deg_w(static_cast<size_t>(g.W) * g.M, 0);
    // deg_v[k][j]: edges from type-k dispatchers into server j.
    std::vector<long long> deg_v(static_cast<size_t>(g.K) * g.N, 0);
    for (int i = 0; i < g.W; ++i) {
        const int k = g.dtype[i];
        for (int j : g.adj[i]) {
            ++deg_w[static_cast<size_t>(i) * g.M + g.stype[j]];
            ++deg_v[static_cast<size_t>(k) * g.N + j];
        }
        if (static_cast<int>(g.adj[i].size()) < P.d)
            ++rep.low_degree_dispatchers[k];
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < g.K; ++k) {
        for (int m = 0; m < g.M; ++m) {
            RegularityCell& c = rep.cell[static_cast<size_t>(k) * g.M + m];
            if (wk[k] == 0 || vm[m] == 0) {
                c.density = nan;
                c.degree_ratio_w = nan;
                c.degree_ratio_v = nan;
                c.flagged = true;
                continue;
            }
            long long edges = 0, wmin = std::numeric_limits<long long>::max(),
                      wmax = 0;
            for (int i = 0; i < g.W; ++i) {
                if (g.dtype[i] != k) continue;
                const long long dgr = deg_w[static_cast<size_t>(i) * g.M + m];
                edges += dgr;
                wmin = std::min(wmin, dgr);
                wmax = std::max(wmax, dgr);
            }
            long long vmin = std::numeric_limits<long long>::max(), vmax = 0;
            for (int j = 0; j < g.N; ++j) {
                if (g.stype[j] != m) continue;
                const long long dgr = deg_v[static_cast<size_t>(k) * g.N + j];
                vmin = std::min(vmin, dgr);
                vmax = std::max(vmax, dgr);
            }
            c.density = static_cast<double>(edges) /
                        (static_cast<double>(wk[k]) * static_cast<double>(vm[m]));
            auto ratio = [&](long long lo, long long hi) {
                // Zero degree on one member while the block should have edges:
                // the ratio diverges; report the sentinel and flag it.
                if (lo == 0 && hi > 0 && P.p_at(k, m) > 0.0) {
                    c.flagged = true;
                    return inf;
                }
                return static_cast<double>(hi) /
                       static_cast<double>(std::max<long long>(1, lo));
            };
            c.degree_ratio_w = ratio(wmin, wmax);
            c.degree_ratio_v = ratio(vmin, vmax);
        }
    }
    return rep;
}

// For dispatcher type k, the fraction of its dispatchers whose neighborhood
// share of the server set U deviates from the type's edge share of U by at
// least eps; the maximum of that fraction over the supplied test sets.
// Dispatchers with no neighbors count as deviating. The supremum over all
// 2^N subsets is intentionally not attempted; callers probe the families that
// matter (queue-level sets, random subsets).
inline std::vector<double> sparsity_probe(
    const CompatibilityGraph& g,
    const std::vector<std::vector<int>>& test_sets, double eps) {
    if (test_sets.empty())
        throw std::invalid_argument("sparsity_probe: no test sets supplied");
    std::vector<double> worst(g.K, 0.0);
    std::vector<char> in_u(g.N, 0);
    std::vector<long long> wk(g.K, 0);
    for (int k : g.dtype) ++wk[k];

    for (const auto& U : test_sets) {
        if (U.empty())
            throw std::invalid_argument("sparsity_probe: empty test set");
        std::fill(in_u.begin(), in_u.end(), 0);
        for (int j : U) in_u[j] = 1;

        // Per type: total edges and edges landing in U.
        std::vector<long long> ek_total(g.K, 0), ek_u(g.K, 0);
        std::vector<long long> deviating(g.K, 0);
        std::vector<std::pair<long long, long long>> local(g.W);
        for (int i = 0; i < g.W; ++i) {
            long long hit = 0;
            for (int j : g.adj[i]) hit += in_u[j];
            local[i] = {hit, static_cast<long long>(g.adj[i].size())};
            ek_total[g.dtype[i]] += local[i].second;
            ek_u[g.dtype[i]] += hit;
        }
        for (int i = 0; i < g.W; ++i) {
            const int k = g.dtype[i];
            const auto [hit, deg] = local[i];
            if (deg == 0) {
                ++deviating[k];
                continue;
            }
            const double share =
                static_cast<double>(hit) / static_cast<double>(deg);
            const double global_share =
                ek_total[k] > 0 ? static_cast<double>(ek_u[k]) /
                                      static_cast<double>(ek_total[k])
                                : 0.0;
            if (std::abs(share - global_share) >= eps) ++deviating[k];
        }
        for (int k = 0; k < g.K; ++k) {
            if (wk[k] == 0) continue;
            worst[k] = std::max(worst[k], static_cast<double>(deviating[k]) /
                                              static_cast<double>(wk[k]));
        }
    }
    return worst;
}

// Default probe family: every nonempty queue-level set {j : qlen_j >= l} of
// the given snapshot, plus `extra` random subsets (each server kept with
// probability 1/2; empty draws are discarded).
inline std::vector<std::vector<int>> default_test_sets(
    const std::vector<int>& qlen, int extra, std::uint64_t seed) {
    std::vector<std::vector<int>> sets;
    const int max_len =
        qlen.empty() ? 0 : *std::max_element(qlen.begin(), qlen.end());
    for (int l = 1; l <= max_len; ++l) {
        std::vector<int> u;
        for (size_t j = 0; j < qlen.size(); ++j)
            if (qlen[j] >= l) u.push_back(static_cast<int>(j));
        if (!u.empty()) sets.push_back(std::move(u));
    }
    Rng rng(seed);
    while (extra > 0) {
        std::vector<int> u;
        for (size_t j = 0; j < qlen.size(); ++j)
            if (uniform01(rng) < 0.5) u.push_back(static_cast<int>(j));
        if (u.empty()) continue;
        sets.push_back(std::move(u));
        --extra;
    }
    return sets;
}

// Text form: header lines, then one sorted "i j" pair per line.
inline std::string serialize_graph(const CompatibilityGraph& g) {
    std::ostringstream out;
    out << "servers " << g.N << "\n"
        << "dispatchers " << g.W << "\n"
        << "server_types " << g.M << "\n"
        << "dispatcher_types " << g.K << "\n";
    out << "server_type";
    for (int m : g.stype) out << ' ' << m;
    out << "\ndispatcher_type";
    for (int k : g.dtype) out << ' ' << k;
    out << "\nedges " << g.edge_count() << "\n";
    for (int i = 0; i < g.W; ++i)
        for (int j : g.adj[i]) out << i << ' ' << j << '\n';
    return out.str();
}

inline CompatibilityGraph parse_graph(const std::string& text) {
    std::istringstream in(text);
    CompatibilityGraph g;
    std::string line, key;
    int line_no = 0;
    auto bad = [&](const std::string& what) {
        throw std::runtime_error("graph text, line " + std::to_string(line_no) +
                                 ": " + what);
    };
    auto next_line = [&]() {
        if (!std::getline(in, line)) bad("unexpected end of input");
        ++line_no;
        return std::istringstream(line);
    };

    {
        auto s = next_line();
        if (!(s >> key >> g.N) || key != "servers") bad("expected 'servers N'");
    }
    {
        auto s = next_line();
        if (!(s >> key >> g.W) || key != "dispatchers")
            bad("expected 'dispatchers W'");
    }
    {
        auto s = next_line();
        if (!(s >> key >> g.M) || key != "server_types")
            bad("expected 'server_types M'");
    }
    {
        auto s = next_line();
        if (!(s >> key >> g.K) || key != "dispatcher_types")
            bad("expected 'dispatcher_types K'");
    }
    if (g.N < 0 || g.W < 0 || g.M <= 0 || g.K <= 0) bad("bad sizes");
    {
        auto s = next_line();
        if (!(s >> key) || key != "server_type") bad("expected 'server_type ...'");
        g.stype.resize(g.N);
        for (int j = 0; j < g.N; ++j)
            if (!(s >> g.stype[j]) || g.stype[j] < 0 || g.stype[j] >= g.M)
                bad("bad server type at position " + std::to_string(j));
    }
    {
        auto s = next_line();
        if (!(s >> key) || key != "dispatcher_type")
            bad("expected 'dispatcher_type ...'");
        g.dtype.resize(g.W);
        for (int i = 0; i < g.W; ++i)
            if (!(s >> g.dtype[i]) || g.dtype[i] < 0 || g.dtype[i] >= g.K)
                bad("bad dispatcher type at position " + std::to_string(i));
    }
    long long edges = 0;
    {
        auto s = next_line();
        if (!(s >> key >> edges) || key != "edges") bad("expected 'edges E'");
    }
    g.adj.assign(g.W, {});
    for (long long e = 0; e < edges; ++e) {
        auto s = next_line();
        int i = -1, j = -1;
        if (!(s >> i >> j)) bad("expected 'i j' edge pair");
        if (i < 0 || i >= g.W || j < 0 || j >= g.N) bad("edge endpoint out of range");
        if (!g.adj[i].empty() && g.adj[i].back() >= j)
            bad("edges must be sorted by (i, j) without duplicates");
        g.adj[i].push_back(j);
    }
    g.build_reverse();
    return g;
}

}  // namespace jsqd
