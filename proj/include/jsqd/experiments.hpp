#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "jsqd/config.hpp"
#include "jsqd/coupling.hpp"
#include "jsqd/csv.hpp"
#include "jsqd/graph.hpp"
#include "jsqd/meanfield.hpp"
#include "jsqd/params.hpp"
#include "jsqd/rng.hpp"
#include "jsqd/simulator.hpp"
#include "jsqd/stability.hpp"

namespace jsqd {

// Seed protocol: every experiment owns a stream off the master seed, each
// replicate a stream off that, and the graph draw and the run use distinct
// substreams of the replicate. Reruns with the same config are bit-identical.
namespace seed_stream {
constexpr std::uint64_t kStability = 1;
constexpr std::uint64_t kConvergence = 2;
constexpr std::uint64_t kUniqueness = 3;
constexpr std::uint64_t kCoupling = 4;

inline std::uint64_t replicate(std::uint64_t master, std::uint64_t experiment,
                               std::uint64_t rep) {
    return derive_seed(derive_seed(master, experiment), rep);
}
}  // namespace seed_stream

// Runs fn(0..n-1), in order when workers <= 1, else on a small thread pool.
// The first exception thrown by any index is rethrown after all threads join.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex error_mu;
    auto body = [&]() {
        for (int i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min(workers, n);
    pool.reserve(count);
    for (int w = 0; w < count; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

namespace detail {

// Occupancy vector (tails) induced by per-type initial length pmfs.
inline std::vector<double> init_occupancy(const InitMatrix& init, int M,
                                          int levels) {
    OccupancyVector q0(M, levels);
    if (!init.empty()) {
        for (int m = 0; m < M; ++m) {
            double tail = 0.0;
            const auto& row = init[m];
            for (int l = static_cast<int>(row.size()) - 1; l >= 1; --l) {
                tail += row[l];
                if (l <= levels) q0.at(m, l) = tail;
            }
        }
    }
    return q0.q;
}

// Average queue length per type read off one occupancy snapshot
// (sum of tail fractions equals the mean length).
inline std::vector<double> mean_lengths(const OccupancyVector& occ) {
    std::vector<double> len(occ.M, 0.0);
    for (int m = 0; m < occ.M; ++m)
        for (int l = 1; l <= occ.L; ++l) len[m] += occ.at(m, l);
    return len;
}

// Mean of per-rep occupancy trajectories on a shared time grid.
inline std::vector<OccupancyVector> mean_snapshots(
    const std::vector<Trajectory>& runs) {
    if (runs.empty()) throw std::invalid_argument("no runs to average");
    const size_t grid = runs[0].times.size();
    int M = runs[0].snaps.at(0).M;
    std::vector<OccupancyVector> mean;
    mean.reserve(grid);
    for (size_t s = 0; s < grid; ++s) {
        int depth = 1;
        for (const auto& r : runs) {
            if (r.times.size() != grid ||
                std::abs(r.times[s] - runs[0].times[s]) > 1e-9)
                throw std::logic_error("runs disagree on the snapshot grid");
            depth = std::max(depth, r.snaps[s].L);
        }
        OccupancyVector avg(M, depth);
        for (int m = 0; m < M; ++m)
            for (int l = 1; l <= depth; ++l) {
                double sum = 0.0;
                for (const auto& r : runs) sum += r.snaps[s].tail(m, l);
                avg.at(m, l) = sum / static_cast<double>(runs.size());
            }
        mean.push_back(std::move(avg));
    }
    return mean;
}

inline void write_mean_length_csv(const std::string& path,
                                  const std::vector<double>& times,
                                  const std::vector<std::vector<double>>& lens) {
    auto f = open_out(path);
    f << "t,m,mean_len\n";
    for (size_t s = 0; s < times.size(); ++s)
        for (size_t m = 0; m < lens[s].size(); ++m)
            f << fmt17(times[s]) << ',' << m << ',' << fmt17(lens[s][m]) << "\n";
}

}  // namespace detail

struct DesignRun {
    DesignResult design;
    double rho_target = 0.0;
};

// Designs a compatibility matrix for the configured rates and writes the
// matrix plus its achieved stability margins.
inline DesignRun run_design(const Config& cfg, const std::string& out_dir) {
    const SystemParams base = params_from_config(cfg, /*need_p=*/false);
    std::filesystem::create_directories(out_dir);
    DesignRun out;
    out.design = design_compatibility(base);
    out.rho_target = out.design.rho_star;

    auto f = detail::open_out(out_dir + "/design_p.csv");
    f << "k,m,p\n";
    for (int k = 0; k < base.K; ++k)
        for (int m = 0; m < base.M; ++m)
            f << k << ',' << m << ','
              << detail::fmt17(out.design.p[static_cast<size_t>(k) * base.M + m])
              << "\n";

    auto s = detail::open_out(out_dir + "/design_summary.txt");
    s << "rho_star " << detail::fmt17(out.design.rho_star) << "\n";
    for (int m = 0; m < base.M; ++m)
        s << "margin " << m << " " << detail::fmt17(out.design.margins[m]) << "\n";
    return out;
}

struct StabilityCompareRun {
    std::vector<double> times;
    std::vector<std::vector<double>> mean_complete;  // [grid][type]
    std::vector<std::vector<double>> mean_sparse;
    std::vector<double> final_complete_type0;  // per replicate
    std::vector<double> final_sparse_type0;
    int wins_complete = 0;  // replicates with complete > sparse at the horizon
};

// Same arrival/service randomness driving a complete-compatibility system and
// a sparse (random-graph) system, replicated over seeds; reports per-type
// average queue length through time, mean over replicates, plus the per-rep
// endpoint comparison for the first server type.
inline StabilityCompareRun run_stability_compare(const Config& cfg,
                                                 const std::string& out_dir,
                                                 int workers) {
    const SystemParams P = params_from_config(cfg);
    const SimSettings sim = sim_from_config(cfg);
    const InitMatrix init = init_from_config(cfg, P, "init.q");
    const std::string hash = params_hash(P);
    std::filesystem::create_directories(out_dir);

    std::vector<Trajectory> complete_runs(sim.seeds), sparse_runs(sim.seeds);
    parallel_for(sim.seeds, workers, [&](int rep) {
        const std::uint64_t rep_seed =
            seed_stream::replicate(sim.master_seed, seed_stream::kStability,
                                   static_cast<std::uint64_t>(rep));
        const std::uint64_t graph_seed = derive_seed(rep_seed, 1);
        const std::uint64_t run_seed = derive_seed(rep_seed, 2);
        const CompatibilityGraph sparse = sample_irg(sim.N, P, graph_seed);
        const CompatibilityGraph complete = complete_graph(sim.N, P);
        // The same run seed drives both systems (common random numbers).
        sparse_runs[rep] =
            run_jsq_d(sparse, P, init, sim.horizon, sim.snapshot_dt, run_seed, hash)
                .traj;
        complete_runs[rep] =
            run_jsq_d(complete, P, init, sim.horizon, sim.snapshot_dt, run_seed,
                      hash)
                .traj;
    });

    StabilityCompareRun out;
    out.times = complete_runs[0].times;
    const size_t grid = out.times.size();
    out.mean_complete.assign(grid, std::vector<double>(P.M, 0.0));
    out.mean_sparse.assign(grid, std::vector<double>(P.M, 0.0));
    for (int rep = 0; rep < sim.seeds; ++rep) {
        for (size_t s = 0; s < grid; ++s) {
            const auto lc = detail::mean_lengths(complete_runs[rep].snaps[s]);
            const auto ls = detail::mean_lengths(sparse_runs[rep].snaps[s]);
            for (int m = 0; m < P.M; ++m) {
                out.mean_complete[s][m] += lc[m] / sim.seeds;
                out.mean_sparse[s][m] += ls[m] / sim.seeds;
            }
        }
        const auto lc = detail::mean_lengths(complete_runs[rep].snaps.back());
        const auto ls = detail::mean_lengths(sparse_runs[rep].snaps.back());
        out.final_complete_type0.push_back(lc[0]);
        out.final_sparse_type0.push_back(ls[0]);
        if (lc[0] > ls[0]) ++out.wins_complete;
    }

    detail::write_mean_length_csv(out_dir + "/stability_mean_complete.csv",
                                  out.times, out.mean_complete);
    detail::write_mean_length_csv(out_dir + "/stability_mean_sparse.csv",
                                  out.times, out.mean_sparse);
    auto f = detail::open_out(out_dir + "/stability_reps.csv");
    f << "rep,final_len_complete_type0,final_len_sparse_type0\n";
    for (int rep = 0; rep < sim.seeds; ++rep)
        f << rep << ',' << detail::fmt17(out.final_complete_type0[rep]) << ','
          << detail::fmt17(out.final_sparse_type0[rep]) << "\n";
    return out;
}

struct ConvergenceRun {
    std::vector<int> sizes;
    std::vector<double> times;
    // sup over the grid of |mean simulated - ode| at (m, l), l in {1, 2}
    // indexed [size][m * 2 + (l - 1)]
    std::vector<std::vector<double>> sup_err;
};

// Scaling study: mean occupancy trajectories of random-graph systems of
// increasing size against the deterministic path from the same initial
// condition, with sup-over-time errors on the first two levels.
inline ConvergenceRun run_convergence(const Config& cfg,
                                      const std::string& out_dir, int workers) {
    const SystemParams P = params_from_config(cfg);
    const SimSettings sim = sim_from_config(cfg);
    const OdeSettings ode = ode_from_config(cfg);
    const InitMatrix init = init_from_config(cfg, P, "init.q");
    const std::string hash = params_hash(P);
    std::filesystem::create_directories(out_dir);

    OccupancyVector q0(P.M, ode.levels);
    q0.q = detail::init_occupancy(init, P.M, ode.levels);
    const OdePath path = integrate_path(q0, P, sim.horizon, sim.snapshot_dt, ode.step);

    ConvergenceRun out;
    out.sizes = sim.sizes;
    Trajectory ode_traj;
    ode_traj.N = 0;
    ode_traj.policy = "ode";
    ode_traj.params_hash = hash;
    ode_traj.times = path.times;
    ode_traj.snaps = path.snaps;
    write_trajectory_csv(out_dir + "/convergence_ode.csv", ode_traj);

    for (size_t si = 0; si < sim.sizes.size(); ++si) {
        const int N = sim.sizes[si];
        const std::uint64_t size_base = derive_seed(
            derive_seed(sim.master_seed, seed_stream::kConvergence), si);
        std::vector<Trajectory> runs(sim.seeds);
        parallel_for(sim.seeds, workers, [&](int rep) {
            const std::uint64_t rep_seed =
                derive_seed(size_base, static_cast<std::uint64_t>(rep));
            const CompatibilityGraph g =
                sample_irg(N, P, derive_seed(rep_seed, 1));
            runs[rep] = run_jsq_d(g, P, init, sim.horizon, sim.snapshot_dt,
                                  derive_seed(rep_seed, 2), hash)
                            .traj;
        });
        const std::vector<OccupancyVector> mean = detail::mean_snapshots(runs);
        if (out.times.empty()) out.times = runs[0].times;

        Trajectory mt;
        mt.N = N;
        mt.policy = "mean_jsq_d";
        mt.params_hash = hash;
        mt.times = runs[0].times;
        mt.snaps = mean;
        write_trajectory_csv(out_dir + "/convergence_mean_N" + std::to_string(N) +
                                 ".csv",
                             mt);

        if (mt.times.size() > ode_traj.times.size())
            throw std::logic_error("simulation grid extends past the ode grid");
        std::vector<double> err(static_cast<size_t>(P.M) * 2, 0.0);
        for (size_t s = 0; s < mt.times.size(); ++s) {
            if (std::abs(mt.times[s] - ode_traj.times[s]) > 1e-9)
                throw std::logic_error("simulation and ode grids disagree");
            for (int m = 0; m < P.M; ++m)
                for (int l = 1; l <= 2; ++l) {
                    const double gap = std::abs(mean[s].tail(m, l) -
                                                ode_traj.snaps[s].tail(m, l));
                    auto& worst = err[static_cast<size_t>(m) * 2 + (l - 1)];
                    worst = std::max(worst, gap);
                }
        }
        out.sup_err.push_back(std::move(err));
    }

    auto f = detail::open_out(out_dir + "/convergence_summary.csv");
    f << "N,m,l,sup_err\n";
    for (size_t si = 0; si < out.sizes.size(); ++si)
        for (int m = 0; m < P.M; ++m)
            for (int l = 1; l <= 2; ++l)
                f << out.sizes[si] << ',' << m << ',' << l << ','
                  << detail::fmt17(out.sup_err[si][static_cast<size_t>(m) * 2 +
                                                   (l - 1)])
                  << "\n";
    return out;
}

struct UniquenessRun {
    std::vector<OccupancyVector> endpoints;  // one per initial condition
    double max_gap_q1 = 0.0;  // max over types and init pairs at the horizon
};

// Integrates the deterministic dynamics from three initial conditions and
// reports how closely the endpoints agree on the first occupancy level.
inline UniquenessRun run_uniqueness(const Config& cfg,
                                    const std::string& out_dir) {
    const SystemParams P = params_from_config(cfg);
    const OdeSettings ode = ode_from_config(cfg);
    const std::string hash = params_hash(P);
    std::filesystem::create_directories(out_dir);

    const std::vector<std::string> keys = {"init.q", "init.q_alt1", "init.q_alt2"};
    UniquenessRun out;
    for (size_t idx = 0; idx < keys.size(); ++idx) {
        const InitMatrix init = init_from_config(cfg, P, keys[idx]);
        OccupancyVector q0(P.M, ode.levels);
        q0.q = detail::init_occupancy(init, P.M, ode.levels);
        const OdePath path =
            integrate_path(q0, P, ode.horizon, ode.horizon / 100.0, ode.step);
        Trajectory t;
        t.N = 0;
        t.policy = "ode";
        t.params_hash = hash;
        t.times = path.times;
        t.snaps = path.snaps;
        write_trajectory_csv(
            out_dir + "/uniqueness_path_" + std::to_string(idx) + ".csv", t);
        out.endpoints.push_back(t.snaps.back());
    }
    for (size_t a = 0; a < out.endpoints.size(); ++a)
        for (size_t b = a + 1; b < out.endpoints.size(); ++b)
            for (int m = 0; m < P.M; ++m)
                out.max_gap_q1 = std::max(
                    out.max_gap_q1, std::abs(out.endpoints[a].at(m, 1) -
                                             out.endpoints[b].at(m, 1)));
    auto s = detail::open_out(out_dir + "/uniqueness_summary.txt");
    s << "max_endpoint_gap_q1 " << detail::fmt17(out.max_gap_q1) << "\n";
    return out;
}

struct CouplingRun {
    std::vector<int> sizes;
    std::vector<double> mean_final_mismatch_per_server;  // per size
    long long bound_checks = 0;
};

// Coupled local/pooled runs over replicate pairs at each size; the mismatch
// count is certified against the occupancy distance after every event inside
// run_coupled, so completing at all is the correctness statement.
inline CouplingRun run_coupling_experiment(const Config& cfg,
                                           const std::string& out_dir,
                                           int workers) {
    const SystemParams P = params_from_config(cfg);
    const SimSettings sim = sim_from_config(cfg);
    const InitMatrix init = init_from_config(cfg, P, "init.q");
    const std::string hash = params_hash(P);
    std::filesystem::create_directories(out_dir);

    CouplingRun out;
    out.sizes = sim.coupling_sizes;
    for (size_t si = 0; si < sim.coupling_sizes.size(); ++si) {
        const int N = sim.coupling_sizes[si];
        const std::uint64_t size_base =
            derive_seed(derive_seed(sim.master_seed, seed_stream::kCoupling), si);
        std::vector<CoupledResult> results(sim.coupling_pairs);
        parallel_for(sim.coupling_pairs, workers, [&](int rep) {
            const std::uint64_t rep_seed =
                derive_seed(size_base, static_cast<std::uint64_t>(rep));
            const CompatibilityGraph g =
                sample_irg(N, P, derive_seed(rep_seed, 1));
            results[rep] = run_coupled(g, P, init, sim.horizon, sim.snapshot_dt,
                                       derive_seed(rep_seed, 2), hash);
        });

        const auto& t = results[0].mismatch_t;
        std::vector<double> mean_delta(t.size(), 0.0);
        double final_mean = 0.0;
        for (const auto& r : results) {
            if (r.mismatch_t.size() != t.size())
                throw std::logic_error("coupled runs disagree on the grid");
            for (size_t s = 0; s < t.size(); ++s)
                mean_delta[s] += static_cast<double>(r.mismatch[s]) /
                                 sim.coupling_pairs;
            final_mean += static_cast<double>(r.mismatches) /
                          (static_cast<double>(N) * sim.coupling_pairs);
            out.bound_checks += r.bound_checks;
        }
        out.mean_final_mismatch_per_server.push_back(final_mean);

        auto f = detail::open_out(out_dir + "/coupling_mismatch_N" +
                                  std::to_string(N) + ".csv");
        f << "t,mean_delta,mean_delta_over_n\n";
        for (size_t s = 0; s < t.size(); ++s)
            f << detail::fmt17(t[s]) << ',' << detail::fmt17(mean_delta[s]) << ','
              << detail::fmt17(mean_delta[s] / N) << "\n";
    }

    auto f = detail::open_out(out_dir + "/coupling_summary.csv");
    f << "N,pairs,mean_final_delta_over_n\n";
    for (size_t si = 0; si < out.sizes.size(); ++si)
        f << out.sizes[si] << ',' << sim.coupling_pairs << ','
          << detail::fmt17(out.mean_final_mismatch_per_server[si]) << "\n";
    return out;
}

}  // namespace jsqd
