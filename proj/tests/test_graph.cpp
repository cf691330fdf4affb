#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "jsqd/graph.hpp"
#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"

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

CompatibilityGraph manual_graph(int N, int W,
                                const std::vector<int>& stype,
                                const std::vector<int>& dtype,
                                const std::vector<std::vector<int>>& adj) {
    CompatibilityGraph g;
    g.N = N;
    g.W = W;
    g.M = 1 + *std::max_element(stype.begin(), stype.end());
    g.K = 1 + *std::max_element(dtype.begin(), dtype.end());
    g.stype = stype;
    g.dtype = dtype;
    g.adj = adj;
    g.build_reverse();
    return g;
}

}  // namespace

TEST_CASE("largest remainder apportionment") {
    CHECK(largest_remainder({0.5, 0.3, 0.2}, 10) ==
          std::vector<long long>({5, 3, 2}));
    // 3.5, 2.1, 1.4: one leftover goes to the largest remainder.
    CHECK(largest_remainder({0.5, 0.3, 0.2}, 7) ==
          std::vector<long long>({4, 2, 1}));
    // Remainder ties break to the lowest index.
    CHECK(largest_remainder({1.0 / 3, 1.0 / 3, 1.0 / 3}, 4) ==
          std::vector<long long>({2, 1, 1}));
    // Near-integer products are snapped, not floored into losing an item.
    CHECK(largest_remainder({0.3, 0.3, 0.4}, 1000) ==
          std::vector<long long>({300, 300, 400}));

    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(uniform_below(rng, 6));
        std::vector<double> frac(n);
        double s = 0.0;
        for (double& x : frac) s += (x = -std::log(1.0 - uniform01(rng)));
        for (double& x : frac) x /= s;
        const long long total = static_cast<long long>(uniform_below(rng, 500));
        const auto out = largest_remainder(frac, total);
        CHECK(std::accumulate(out.begin(), out.end(), 0ll) == total);
        for (int i = 0; i < n; ++i) {
            CHECK(out[i] >= 0);
            CHECK(std::abs(static_cast<double>(out[i]) - frac[i] * total) < 1.0);
        }
    }
}

TEST_CASE("random graph sampling is deterministic with the declared shape") {
    const SystemParams P = hetero_params();
    const CompatibilityGraph a = sample_irg(10, P, 77);
    const CompatibilityGraph b = sample_irg(10, P, 77);
    const CompatibilityGraph c = sample_irg(10, P, 78);
    CHECK(a.adj == b.adj);
    CHECK(a.stype == b.stype);
    CHECK(a.adj != c.adj);

    CHECK(a.N == 10);
    CHECK(a.W == 10);  // round(xi * N)
    CHECK(std::count(a.stype.begin(), a.stype.end(), 0) == 5);
    CHECK(std::count(a.stype.begin(), a.stype.end(), 1) == 3);
    CHECK(std::count(a.stype.begin(), a.stype.end(), 2) == 2);
    CHECK(std::count(a.dtype.begin(), a.dtype.end(), 0) == 2);
    CHECK(std::count(a.dtype.begin(), a.dtype.end(), 1) == 8);

    for (int i = 0; i < a.W; ++i)
        CHECK(std::is_sorted(a.adj[i].begin(), a.adj[i].end()));

    // Reverse adjacency is consistent.
    long long edges = 0;
    for (const auto& r : a.radj) edges += static_cast<long long>(r.size());
    CHECK(edges == a.edge_count());
}

TEST_CASE("block densities of a large sample approach the compatibility matrix") {
    const SystemParams P = hetero_params();
    const CompatibilityGraph g = sample_irg(2000, P, 5);
    const RegularityReport rep = regularity_report(g, P);
    REQUIRE(rep.K == 2);
    REQUIRE(rep.M == 3);
    for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 3; ++m) {
            CHECK(rep.at(k, m).density ==
                  Catch::Approx(P.p_at(k, m)).margin(0.03));
            CHECK_FALSE(rep.at(k, m).flagged);
        }
    // Every dispatcher sees the always-compatible type, so none is low-degree.
    CHECK(rep.low_degree_dispatchers[0] == 0);
    CHECK(rep.low_degree_dispatchers[1] == 0);
}

TEST_CASE("complete graph connects everything") {
    const SystemParams P = hetero_params();
    const CompatibilityGraph g = complete_graph(50, P);
    CHECK(g.W == 50);
    for (const auto& row : g.adj) CHECK(row.size() == 50u);
    const RegularityReport rep = regularity_report(g, P);
    for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 3; ++m) {
            CHECK(rep.at(k, m).density == 1.0);
            CHECK(rep.at(k, m).degree_ratio_w == 1.0);
            CHECK(rep.at(k, m).degree_ratio_v == 1.0);
        }
}

TEST_CASE("a server cut off from a positive-rate block is flagged") {
    SystemParams P;
    P.K = 1;
    P.M = 1;
    P.d = 2;
    P.lambda = 1.0;
    P.xi = 1.0;
    P.u = {1.0};
    P.w = {1.0};
    P.v = {1.0};
    P.p = {0.9};
    P.validate();
    // Server 2 has no incident edges although p = 0.9 says it should.
    const CompatibilityGraph g =
        manual_graph(3, 2, {0, 0, 0}, {0, 0}, {{0, 1}, {0, 1}});
    const RegularityReport rep = regularity_report(g, P);
    CHECK(rep.at(0, 0).flagged);
    CHECK(std::isinf(rep.at(0, 0).degree_ratio_v));
}

TEST_CASE("sparsity probe measures neighborhood share deviations") {
    SystemParams P;
    P.K = 1;
    P.M = 1;
    P.d = 2;
    P.lambda = 1.0;
    P.xi = 0.5;
    P.u = {1.0};
    P.w = {1.0};
    P.v = {1.0};
    P.p = {0.5};
    P.validate();
    // Two dispatchers with disjoint halves: against U = first half, local
    // shares are 1 and 0 while the type-wide share is 1/2.
    const CompatibilityGraph g =
        manual_graph(4, 2, {0, 0, 0, 0}, {0, 0}, {{0, 1}, {2, 3}});
    const std::vector<std::vector<int>> sets = {{0, 1}};
    CHECK(sparsity_probe(g, sets, 0.4)[0] == Catch::Approx(1.0));
    CHECK(sparsity_probe(g, sets, 0.6)[0] == 0.0);

    // A dispatcher with no neighbors always deviates.
    const CompatibilityGraph h =
        manual_graph(4, 2, {0, 0, 0, 0}, {0, 0}, {{0, 1, 2, 3}, {}});
    CHECK(sparsity_probe(h, sets, 0.9)[0] == Catch::Approx(0.5));

    CHECK_THROWS_AS(sparsity_probe(g, {}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(sparsity_probe(g, {{}}, 0.1), std::invalid_argument);
}

TEST_CASE("default probe family covers the level sets") {
    const std::vector<int> qlen = {0, 1, 2, 2, 0, 1};
    const auto sets = default_test_sets(qlen, 3, 9);
    REQUIRE(sets.size() == 5u);  // levels 1 and 2, plus three random subsets
    CHECK(sets[0] == std::vector<int>({1, 2, 3, 5}));
    CHECK(sets[1] == std::vector<int>({2, 3}));
    for (const auto& u : sets) CHECK_FALSE(u.empty());
    CHECK(default_test_sets(qlen, 3, 9) == sets);  // deterministic by seed
}

TEST_CASE("graph text round trip and line-anchored parse errors") {
    const SystemParams P = hetero_params();
    const CompatibilityGraph g = sample_irg(30, P, 123);
    const std::string text = serialize_graph(g);
    const CompatibilityGraph h = parse_graph(text);
    CHECK(h.N == g.N);
    CHECK(h.W == g.W);
    CHECK(h.stype == g.stype);
    CHECK(h.dtype == g.dtype);
    CHECK(h.adj == g.adj);
    CHECK(h.radj == g.radj);

    CHECK_THROWS_WITH(parse_graph("nonsense 3\n"),
                      Catch::Matchers::ContainsSubstring("line 1"));
    const std::string bad_edge =
        "servers 2\ndispatchers 1\nserver_types 1\ndispatcher_types 1\n"
        "server_type 0 0\ndispatcher_type 0\nedges 1\n0 5\n";
    CHECK_THROWS_WITH(parse_graph(bad_edge),
                      Catch::Matchers::ContainsSubstring("line 8"));
    const std::string unsorted =
        "servers 2\ndispatchers 1\nserver_types 1\ndispatcher_types 1\n"
        "server_type 0 0\ndispatcher_type 0\nedges 2\n0 1\n0 0\n";
    CHECK_THROWS_WITH(parse_graph(unsorted),
                      Catch::Matchers::ContainsSubstring("sorted"));
}
