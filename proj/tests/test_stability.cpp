#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "jsqd/graph.hpp"
#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"
#include "jsqd/stability.hpp"

using namespace jsqd;

namespace {

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

CompatibilityGraph manual_graph(int N, int W, int M, int K,
                                const std::vector<int>& stype,
                                const std::vector<int>& dtype,
                                const std::vector<std::vector<int>>& adj) {
    CompatibilityGraph g;
    g.N = N;
    g.W = W;
    g.M = M;
    g.K = K;
    g.stype = stype;
    g.dtype = dtype;
    g.adj = adj;
    g.build_reverse();
    return g;
}

// Independent worst-subset oracle: explicit subsets as index vectors, weights
// recomputed from adjacency lists with a plain factorial binomial. Shares no
// code path with exact_stability_load.
double brute_force_load(const CompatibilityGraph& g, const SystemParams& P) {
    auto choose = [](int n, int k) -> double {
        if (k < 0 || k > n) return 0.0;
        double r = 1.0;
        for (int t = 1; t <= k; ++t) r = r * (n - k + t) / t;
        return r;
    };
    double best = 0.0;
    for (unsigned mask = 1; mask < (1u << g.N); ++mask) {
        std::vector<int> u_set;
        double u_sum = 0.0;
        for (int j = 0; j < g.N; ++j)
            if (mask & (1u << j)) {
                u_set.push_back(j);
                u_sum += P.u[g.stype[j]];
            }
        if (!(u_sum > 0.0)) continue;
        double arr = 0.0;
        for (int i = 0; i < g.W; ++i) {
            const int deg = static_cast<int>(g.adj[i].size());
            if (deg == 0) continue;
            int hit = 0;
            for (int j : g.adj[i])
                if (mask & (1u << j)) ++hit;
            if (deg >= P.d)
                arr += P.lambda * choose(hit, P.d) / choose(deg, P.d);
            else
                arr += P.lambda * hit / deg;
        }
        best = std::max(best, arr / u_sum);
    }
    return best;
}

}  // namespace

TEST_CASE("generalized binomial coefficient") {
    CHECK(gbinom(5.0, 2) == Catch::Approx(10.0));
    CHECK(gbinom(4.5, 2) == Catch::Approx(7.875));
    CHECK(gbinom(3.0, 5) == 0.0);
    CHECK(gbinom(2.5, 3) == 0.0);  // below y: the pool cannot fill the draw
    CHECK(gbinom(7.0, 0) == 1.0);
    CHECK(gbinom(0.0, 0) == 1.0);
    CHECK(gbinom(3.0, 3) == Catch::Approx(1.0));
    CHECK(gbinom(6.0, -1) == 0.0);
}

TEST_CASE("exact load on hand instances") {
    SystemParams P;
    P.K = 1;
    P.M = 1;
    P.d = 2;
    P.lambda = 1.0;
    P.xi = 0.5;
    P.u = {1.0};
    P.w = {1.0};
    P.v = {1.0};
    P.p = {1.0};
    P.validate();

    SECTION("one dispatcher over two servers halves the load") {
        const CompatibilityGraph g =
            manual_graph(2, 1, 1, 1, {0, 0}, {0}, {{0, 1}});
        const StabilityReport rep = exact_stability_load(g, P);
        CHECK(rep.rho == Catch::Approx(0.5).margin(1e-15));
        CHECK(rep.witness == std::vector<int>({0, 1}));
    }

    SECTION("a neighborhood smaller than d concentrates its full rate") {
        const CompatibilityGraph g = manual_graph(2, 1, 1, 1, {0, 0}, {0}, {{0}});
        const StabilityReport rep = exact_stability_load(g, P);
        CHECK(rep.rho == Catch::Approx(1.0).margin(1e-15));
        CHECK(rep.witness == std::vector<int>({0}));
    }

    SECTION("isolated dispatchers contribute nothing") {
        const CompatibilityGraph g =
            manual_graph(2, 2, 1, 1, {0, 0}, {0, 0}, {{}, {0, 1}});
        CHECK(exact_stability_load(g, P).rho == Catch::Approx(0.5).margin(1e-15));
    }

    SECTION("zero arrivals give zero load with a singleton witness") {
        SystemParams Z = P;
        Z.lambda = 0.0;
        const CompatibilityGraph g =
            manual_graph(2, 1, 1, 1, {0, 0}, {0}, {{0, 1}});
        const StabilityReport rep = exact_stability_load(g, Z);
        CHECK(rep.rho == 0.0);
        CHECK(rep.witness == std::vector<int>({0}));
    }

    SECTION("large systems are refused with advice") {
        const CompatibilityGraph g = complete_graph(23, P);
        CHECK_THROWS_AS(exact_stability_load(g, P), std::invalid_argument);
    }
}

TEST_CASE("exact load agrees with the subset brute force on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const int N = 2 + static_cast<int>(uniform_below(rng, 7));  // 2..8
        const int W = 1 + static_cast<int>(uniform_below(rng, 6));  // 1..6
        SystemParams P;
        P.K = 1;
        P.M = 2;
        P.d = 1 + static_cast<int>(uniform_below(rng, 3));  // 1..3
        P.lambda = 0.25 + uniform01(rng);
        P.xi = 1.0;
        P.u = {0.5 + uniform01(rng), 0.5 + 2.0 * uniform01(rng)};
        P.w = {1.0};
        P.v = {0.5, 0.5};
        P.p = {0.5, 0.5};
        P.validate();

        std::vector<int> stype(N);
        for (int j = 0; j < N; ++j)
            stype[j] = static_cast<int>(uniform_below(rng, 2));
        std::vector<std::vector<int>> adj(W);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < N; ++j)
                if (uniform01(rng) < 0.55) adj[i].push_back(j);
        const CompatibilityGraph g =
            manual_graph(N, W, 2, 1, stype, std::vector<int>(W, 0), adj);

        const double got = exact_stability_load(g, P).rho;
        const double want = brute_force_load(g, P);
        INFO("trial " << trial << " N=" << N << " W=" << W << " d=" << P.d);
        CHECK(got == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("asymptotic margins of the heterogeneous benchmark") {
    const SubcriticalResult sub = subcritical_margins(hetero_params());
    REQUIRE(sub.margins.size() == 3u);
    CHECK(sub.margins[0] == Catch::Approx(0.5958132045088568).margin(1e-12));
    CHECK(sub.margins[1] == Catch::Approx(0.9082125603864734).margin(1e-12));
    CHECK(sub.margins[2] == Catch::Approx(0.6698872785829308).margin(1e-12));
    CHECK(sub.worst == Catch::Approx(0.9082125603864734).margin(1e-12));
    CHECK(sub.subcritical);
}

TEST_CASE("zero service rate margins") {
    SystemParams P = hetero_params();
    P.u[0] = 0.0;
    P.validate();
    const SubcriticalResult sub = subcritical_margins(P);
    CHECK(std::isinf(sub.margins[0]));
    CHECK_FALSE(sub.subcritical);

    // A type that receives no routing mass may idle at rate zero.
    SystemParams Q = hetero_params();
    Q.p = {0.0, 0.6, 1.0, 0.0, 0.7, 1.0};
    Q.u[0] = 0.0;
    Q.validate();
    CHECK(subcritical_margins(Q).margins[0] == 0.0);
}

TEST_CASE("weighted load functional certifies overload of concentration") {
    const SystemParams P = hetero_params();

    SECTION("full compatibility overloads the slow type at d = 2") {
        SystemParams C = P;
        C.p = {1, 1, 1, 1, 1, 1};
        C.validate();
        CHECK(load_lower_bound(C, {1.0, 0.0, 0.0}) == 1.5);
    }

    SECTION("the tuned sparse matrix removes the overload certificate") {
        CHECK(load_lower_bound(P, {1.0, 0.0, 0.0}) ==
              Catch::Approx(0.061283248755535161).margin(1e-12));
    }

    SECTION("validation") {
        CHECK_THROWS_AS(load_lower_bound(P, {1.0}), std::invalid_argument);
        CHECK_THROWS_AS(load_lower_bound(P, {2.0, 0.0, 0.0}),
                        std::invalid_argument);
        CHECK_THROWS_AS(load_lower_bound(P, {0.0, 0.0, 0.0}),
                        std::invalid_argument);
    }
}

TEST_CASE("matrix design balances per-type load") {
    SystemParams base = hetero_params();
    base.p.clear();  // the designer must not peek at an existing matrix
    const DesignResult des = design_compatibility(base);

    CHECK(des.rho_star == Catch::Approx(0.75).margin(1e-12));
    const std::vector<double> want_p = {1.0, 1.0, 0.0, 0.0, 0.4, 1.0};
    REQUIRE(des.p.size() == want_p.size());
    for (size_t i = 0; i < want_p.size(); ++i)
        CHECK(des.p[i] == Catch::Approx(want_p[i]).margin(1e-12));
    for (double m : des.margins) CHECK(m == Catch::Approx(0.75).margin(1e-12));

    // Routing fractions are a transport plan: rows sum to 1.
    for (int k = 0; k < base.K; ++k) {
        double s = 0.0;
        for (int m = 0; m < base.M; ++m) s += des.x[static_cast<size_t>(k) * base.M + m];
        CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("infeasible rates are a capacity error") {
        SystemParams hot = hetero_params();
        hot.lambda = 4.0;  // equals total capacity; strict inequality required
        CHECK_THROWS_AS(design_compatibility(hot), CapacityError);
        hot.lambda = 5.0;
        CHECK_THROWS_AS(design_compatibility(hot), CapacityError);
    }
}

TEST_CASE("capped draw allocation maximum matches exhaustive enumeration") {
    // Oracle: enumerate all integer allocations x in [0,cap]^slots summing to
    // `total` and take the best sum of per-slot binomials.
    auto oracle = [](int slots, int total, int cap, int d) {
        double best = -1.0;
        std::vector<int> x(slots, 0);
        const std::function<void(int, int)> rec = [&](int idx, int left) {
            if (idx == slots - 1) {
                if (left > cap) return;
                x[idx] = left;
                double s = 0.0;
                for (int v : x) s += gbinom(v, d);
                best = std::max(best, s);
                return;
            }
            for (int v = 0; v <= std::min(cap, left); ++v) {
                x[idx] = v;
                rec(idx + 1, left - v);
            }
        };
        rec(0, total);
        return best;
    };

    for (int d = 1; d <= 3; ++d)
        for (int slots = 1; slots <= 5; ++slots)
            for (int cap = 1; cap <= 5; ++cap)
                for (int total = 0; total <= std::min(15, slots * cap); ++total) {
                    const double want = oracle(slots, total, cap, d);
                    const double got = max_binom_allocation(slots, total, cap, d);
                    INFO("slots=" << slots << " total=" << total << " cap=" << cap
                                  << " d=" << d);
                    CHECK(got == Catch::Approx(want).margin(1e-9));
                }

    SECTION("fractional pools fill greedily to the cap") {
        // 1 full slot of 2 plus half a task: C(2,2) + C(0.5,2) = 1.
        CHECK(max_binom_allocation(2, 2.5, 2.0, 2) == Catch::Approx(1.0));
        CHECK_THROWS_AS(max_binom_allocation(2, 10.0, 2.0, 2),
                        std::invalid_argument);
    }
}
