#include <catch_amalgamated.hpp>

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>
#include <vector>

#include "jsqd/graph.hpp"
#include "jsqd/occupancy.hpp"
#include "jsqd/params.hpp"
#include "jsqd/simulator.hpp"

using namespace jsqd;

namespace {

SystemParams homogeneous(double lambda, double mu = 1.0) {
    SystemParams P;
    P.K = 1;
    P.M = 1;
    P.d = 2;
    P.lambda = lambda;
    P.xi = 1.0;
    P.u = {mu};
    P.w = {1.0};
    P.v = {1.0};
    P.p = {1.0};
    P.validate();
    return P;
}

SystemParams hetero_params() {
    SystemParams P;
    P.K = 2;
    P.M = 3;
    P.d = 2;
    P.lambda = 3.0;
    P.xi = 1.0;
    P.u = {1.0, 5.0, 10.0};
    P.w = {0.2, 0.8};
    P.v = {0.5, 0.3, 0.2};
    P.p = {0.05, 0.6, 1.0, 0.1, 0.7, 1.0};
    P.validate();
    return P;
}

// Walks all d-subsets of {0..S-1} in lexicographic order.
template <typename F>
void for_each_subset(int S, int d, F&& f) {
    std::vector<int> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    for (;;) {
        f(idx);
        int i = d - 1;
        while (i >= 0 && idx[i] == S - d + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < d; ++j) idx[j] = idx[j - 1] + 1;
    }
}

// Brute-force law of the winning class: lay out one labeled slot per unit of
// count, enumerate every d-subset, give the task to the lowest drawn level
// with type ties split proportionally to drawn counts.
ClassPmf oracle_assignment(const std::vector<std::vector<int>>& counts, int d) {
    const int M = static_cast<int>(counts.size());
    const int L = static_cast<int>(counts[0].size()) - 1;
    std::vector<int> slot_class;
    for (int m = 0; m < M; ++m)
        for (int l = 0; l <= L; ++l)
            for (int c = 0; c < counts[m][l]; ++c)
                slot_class.push_back(m * (L + 1) + l);
    const int S = static_cast<int>(slot_class.size());
    ClassPmf p(M, L);
    long long total = 0;
    for_each_subset(S, d, [&](const std::vector<int>& idx) {
        ++total;
        int best = INT_MAX;
        for (int i : idx) best = std::min(best, slot_class[i] % (L + 1));
        std::vector<int> per(M, 0);
        int tot = 0;
        for (int i : idx)
            if (slot_class[i] % (L + 1) == best) {
                ++per[slot_class[i] / (L + 1)];
                ++tot;
            }
        for (int m = 0; m < M; ++m)
            if (per[m] > 0)
                p.at(m, best) += static_cast<double>(per[m]) / tot;
    });
    for (double& x : p.mass) x /= static_cast<double>(total);
    return p;
}

}  // namespace

TEST_CASE("routing decision follows the shortest-of-d law") {
    Rng rng(31);

    SECTION("no neighbors means a drop signal") {
        std::vector<int> qlen{1, 2, 3};
        CHECK(jsq_d_assign(qlen, {}, 2, rng) == -1);
    }

    SECTION("small neighborhoods get one uniform pick, lengths ignored") {
        std::vector<int> qlen(10, 0);
        qlen[3] = 5;
        qlen[7] = 0;
        qlen[9] = 2;
        const std::vector<int> nb{3, 7, 9};
        std::vector<int> hits(10, 0);
        const int T = 30000;
        for (int t = 0; t < T; ++t) ++hits[jsq_d_assign(qlen, nb, 5, rng)];
        CHECK(hits[3] + hits[7] + hits[9] == T);
        for (int j : nb)
            CHECK(std::abs(hits[j] / double(T) - 1.0 / 3.0) < 0.02);
    }

    SECTION("distinct lengths: the shorter server wins the pair draw") {
        const std::vector<int> qlen{0, 1, 2};
        const std::vector<int> nb{0, 1, 2};
        std::vector<int> hits(3, 0);
        const int T = 30000;
        for (int t = 0; t < T; ++t) ++hits[jsq_d_assign(qlen, nb, 2, rng)];
        // Pairs {0,1},{0,2} -> 0; {1,2} -> 1; server 2 never wins.
        CHECK(std::abs(hits[0] / double(T) - 2.0 / 3.0) < 0.02);
        CHECK(std::abs(hits[1] / double(T) - 1.0 / 3.0) < 0.02);
        CHECK(hits[2] == 0);
    }

    SECTION("full ties resolve uniformly") {
        const std::vector<int> qlen{1, 1, 1};
        const std::vector<int> nb{0, 1, 2};
        std::vector<int> hits(3, 0);
        const int T = 30000;
        for (int t = 0; t < T; ++t) ++hits[jsq_d_assign(qlen, nb, 3, rng)];
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(hits[j] / double(T) - 1.0 / 3.0) < 0.02);
    }
}

TEST_CASE("initial lengths are drawn from the per-type pmfs") {
    CompatibilityGraph g;
    g.N = 20000;
    g.M = 2;
    g.stype.assign(g.N, 0);
    for (int j = g.N / 2; j < g.N; ++j) g.stype[j] = 1;

    SECTION("empty matrix starts every queue empty") {
        Rng rng(1);
        const std::vector<int> q = sample_initial_lengths(g, {}, rng);
        CHECK(std::all_of(q.begin(), q.end(), [](int x) { return x == 0; }));
    }

    SECTION("frequencies match the rows") {
        const InitMatrix init{{0.5, 0.3, 0.2}, {0.1, 0.9}};
        Rng rng(2);
        const std::vector<int> q = sample_initial_lengths(g, init, rng);
        std::vector<std::vector<double>> freq(2, std::vector<double>(3, 0.0));
        for (int j = 0; j < g.N; ++j) freq[g.stype[j]][q[j]] += 2.0 / g.N;
        for (int l = 0; l < 3; ++l)
            CHECK(std::abs(freq[0][l] - init[0][l]) < 0.02);
        for (int l = 0; l < 2; ++l)
            CHECK(std::abs(freq[1][l] - init[1][l]) < 0.02);
    }

    SECTION("malformed matrices are rejected") {
        CHECK_THROWS_AS(check_init_matrix({{1.0}}, 2), std::invalid_argument);
        CHECK_THROWS_AS(check_init_matrix({{0.5, 0.4}, {1.0}}, 2),
                        std::invalid_argument);
        CHECK_THROWS_AS(check_init_matrix({{0.5, -0.1, 0.6}, {1.0}}, 2),
                        std::invalid_argument);
    }
}

TEST_CASE("simulation validates its arguments") {
    const SystemParams P = homogeneous(0.5);
    const CompatibilityGraph g = complete_graph(10, P);
    CHECK_THROWS_AS(run_jsq_d(g, P, {}, -1.0, 0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(run_jsq_d(g, P, {}, 1.0, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(run_jsq_d(g, P, {{0.5, 0.5}, {1.0}}, 1.0, 0.1, 1),
                    std::invalid_argument);
}

TEST_CASE("snapshots sit on the uniform grid, endpoint included when it fits") {
    const SystemParams P = homogeneous(0.5);
    const CompatibilityGraph g = complete_graph(20, P);

    const RunResult fine = run_jsq_d(g, P, {}, 1.0, 0.05, 7);
    REQUIRE(fine.traj.times.size() == 21u);
    for (size_t s = 0; s < fine.traj.times.size(); ++s)
        CHECK(fine.traj.times[s] == Catch::Approx(0.05 * s).margin(1e-12));
    CHECK(fine.traj.times.back() == Catch::Approx(1.0).margin(1e-12));

    // 0.3 does not divide 1.0: the grid stops at the last multiple inside.
    const RunResult coarse = run_jsq_d(g, P, {}, 1.0, 0.3, 7);
    REQUIRE(coarse.traj.times.size() == 4u);
    CHECK(coarse.traj.times.back() == Catch::Approx(0.9).margin(1e-12));

    CHECK(fine.traj.N == 20);
    CHECK(fine.traj.seed == 7u);
    CHECK(fine.traj.policy == "jsq_d");
}

TEST_CASE("with zero service rates every accepted task stays") {
    SystemParams P = homogeneous(1.0);
    P.u = {0.0};
    P.validate();
    const CompatibilityGraph g = complete_graph(200, P);
    const InitMatrix init{{0.5, 0.5}};
    const RunResult r = run_jsq_d(g, P, init, 2.0, 0.5, 11);
    CHECK(r.counters.departures == 0);
    CHECK(r.counters.dropped == 0);
    CHECK(r.counters.arrivals > 0);
    long long total = 0;
    for (int x : r.final_qlen) total += x;
    // First snapshot is the initial state: recover its total from the tails.
    double init_mass = 0.0;
    const OccupancyVector& first = r.traj.snaps.front();
    for (int l = 1; l <= first.L; ++l) init_mass += 200.0 * first.at(0, l);
    CHECK(total == static_cast<long long>(std::llround(init_mass)) +
                       r.counters.arrivals);
}

TEST_CASE("isolated dispatchers drop their arrivals, flow stays balanced") {
    SystemParams P = homogeneous(1.0);
    CompatibilityGraph g;
    g.N = 3;
    g.W = 2;
    g.K = 1;
    g.M = 1;
    g.stype = {0, 0, 0};
    g.dtype = {0, 0};
    g.adj = {{}, {0, 1, 2}};  // dispatcher 0 has no compatible servers
    g.build_reverse();

    const RunResult r = run_jsq_d(g, P, {}, 50.0, 5.0, 3);
    CHECK(r.counters.dropped > 0);
    CHECK(r.counters.arrivals > r.counters.dropped);
    long long total = 0;
    for (int x : r.final_qlen) total += x;
    CHECK(total == r.counters.arrivals - r.counters.dropped -
                       r.counters.departures);
}

TEST_CASE("runs are reproducible from the seed") {
    const SystemParams P = hetero_params();
    const CompatibilityGraph g = sample_irg(120, P, 5);
    const RunResult a = run_jsq_d(g, P, {}, 1.5, 0.25, 99, "h");
    const RunResult b = run_jsq_d(g, P, {}, 1.5, 0.25, 99, "h");
    CHECK(a.traj.times == b.traj.times);
    CHECK(a.final_qlen == b.final_qlen);
    CHECK(a.counters.arrivals == b.counters.arrivals);
    CHECK(a.counters.departures == b.counters.departures);
    REQUIRE(a.traj.snaps.size() == b.traj.snaps.size());
    for (size_t s = 0; s < a.traj.snaps.size(); ++s)
        CHECK(a.traj.snaps[s].q == b.traj.snaps[s].q);

    const RunResult c = run_jsq_d(g, P, {}, 1.5, 0.25, 100);
    CHECK((a.counters.arrivals != c.counters.arrivals ||
           a.final_qlen != c.final_qlen));

    SECTION("every snapshot is a valid occupancy state") {
        for (const auto& snap : a.traj.snaps)
            CHECK(occupancy_violation(snap).empty());
        CHECK(a.traj.params_hash == "h");
    }
}

TEST_CASE("winning-class law: two long and two short slots") {
    ClassPmf dist(1, 1);
    dist.at(0, 0) = 0.5;
    dist.at(0, 1) = 0.5;
    const ClassPmf law = assignment_class_pmf(dist, 4.0, 2);
    CHECK(law.at(0, 0) == Catch::Approx(5.0 / 6.0).margin(1e-12));
    CHECK(law.at(0, 1) == Catch::Approx(1.0 / 6.0).margin(1e-12));
}

TEST_CASE("winning-class law matches subset enumeration on integer pools") {
    std::mt19937 mix(4242);
    int done = 0;
    while (done < 50) {
        const int M = 1 + static_cast<int>(mix() % 3);
        const int L = static_cast<int>(mix() % 4);
        const int d = 1 + static_cast<int>(mix() % 3);
        std::vector<std::vector<int>> counts(M, std::vector<int>(L + 1, 0));
        int S = 0;
        for (auto& row : counts)
            for (int& c : row) {
                c = static_cast<int>(mix() % 4);
                S += c;
            }
        if (S < d || S > 8) continue;
        ++done;

        ClassPmf dist(M, L);
        for (int m = 0; m < M; ++m)
            for (int l = 0; l <= L; ++l)
                dist.at(m, l) = static_cast<double>(counts[m][l]) / S;
        const ClassPmf got = assignment_class_pmf(dist, S, d);
        const ClassPmf want = oracle_assignment(counts, d);
        INFO("S=" << S << " M=" << M << " L=" << L << " d=" << d);
        REQUIRE(got.mass.size() == want.mass.size());
        for (size_t c = 0; c < got.mass.size(); ++c)
            CHECK(got.mass[c] == Catch::Approx(want.mass[c]).margin(1e-12));
    }
}

TEST_CASE("winning-class law stays a pmf on fractional pools") {
    ClassPmf dist(1, 1);
    dist.at(0, 0) = 0.55;
    dist.at(0, 1) = 0.45;
    const ClassPmf law = assignment_class_pmf(dist, 5.0, 2);  // 2.75/2.25 slots
    CHECK(law.total() == Catch::Approx(1.0).margin(1e-12));
    CHECK(law.at(0, 0) > law.at(0, 1));

    CHECK_THROWS_AS(assignment_class_pmf(dist, 1.0, 2), std::invalid_argument);
}

TEST_CASE("pooled routing picks real servers with the advertised law") {
    SystemParams P;
    P.K = 1;
    P.M = 2;
    P.d = 2;
    P.lambda = 1.0;
    P.xi = 1.0;
    P.u = {1.0, 1.0};
    P.w = {1.0};
    P.v = {0.5, 0.5};
    P.p = {1.0, 1.0};
    P.validate();

    const std::vector<int> qlen{0, 0, 1, 1, 2, 0, 1, 1, 2, 3};
    const std::vector<int> stype{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const int N = 10;

    // The law the sampler should realize: the rounded pool for this state.
    const OccupancyVector occ = empirical_occupancy(qlen, stype, P.M, 3);
    const ClassPmf x = weighted_global_pmf(occ, 0, P);
    const std::vector<long long> pool = largest_remainder(x.mass, N);
    ClassPmf pool_pmf(x.M, x.L);
    for (size_t c = 0; c < pool.size(); ++c)
        pool_pmf.mass[c] = static_cast<double>(pool[c]) / N;
    const ClassPmf law = assignment_class_pmf(pool_pmf, N, P.d);

    Rng rng(77);
    PoolDiagnostics diag;
    const int T = 60000;
    ClassPmf freq(x.M, x.L);
    for (int t = 0; t < T; ++t) {
        const PoolAssignment a = global_pool_assign(qlen, stype, P, 0, rng, &diag);
        REQUIRE(a.server >= 0);
        REQUIRE(stype[a.server] == a.m);
        REQUIRE(qlen[a.server] == a.l);
        freq.at(a.m, a.l) += 1.0 / T;
    }
    CHECK(diag.ghost_fallbacks == 0);
    for (size_t c = 0; c < law.mass.size(); ++c)
        CHECK(std::abs(freq.mass[c] - law.mass[c]) < 0.015);
}

TEST_CASE("long-run occupancy approaches the doubly exponential profile") {
    const SystemParams P = homogeneous(0.7);
    const CompatibilityGraph g = complete_graph(2000, P);
    const SteadyStateResult r = steady_state_estimate(g, P, 30.0, 60.0, 123);
    CHECK(r.subcritical);
    CHECK(r.batches == 10);
    CHECK(std::abs(r.mean.at(0, 1) - 0.7) < 0.02);
    CHECK(std::abs(r.mean.at(0, 2) - 0.343) < 0.02);
    const size_t idx1 = 1;  // (m=0, l=1) in row-major layout
    CHECK(r.half_width[idx1] > 0.0);
    CHECK(r.half_width[idx1] < 0.05);
    REQUIRE(r.weighted_tail.size() == r.reference_tail.size());
    CHECK(r.weighted_tail[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(r.weighted_tail[1] == Catch::Approx(r.mean.at(0, 1)).margin(1e-12));
    CHECK(r.reference_tail[1] == Catch::Approx(0.85).margin(1e-12));
    // The reference curve should upper-bound the measured tails well past the
    // first level in this regime.
    for (size_t l = 2; l < r.weighted_tail.size(); ++l)
        CHECK(r.weighted_tail[l] < r.reference_tail[l] + 0.02);
}
