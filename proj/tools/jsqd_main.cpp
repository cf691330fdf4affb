// Command-line front end: matrix design and the four simulation/ODE
// experiments, all driven by a flat key=value config file.
//
// Exit codes: 0 success, 2 when the requested rates exceed total service
// capacity (no feasible design), 1 for any other error.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "jsqd/config.hpp"
#include "jsqd/experiments.hpp"
#include "jsqd/params.hpp"

namespace {

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

int env_workers() {
    const char* v = std::getenv("JSQD_WORKERS");
    if (!v || !*v) return 1;
    return std::max(1, std::atoi(v));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous JSQ(d) on bipartite compatibility graphs"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = env_or("JSQD_OUT_DIR", "out");
    int workers = env_workers();

    auto add_common = [&](CLI::App* cmd, bool with_workers) {
        cmd->add_option("--config", config_path, "key = value configuration file")
            ->required();
        cmd->add_option("--out", out_dir,
                        "output directory (default $JSQD_OUT_DIR or ./out)");
        if (with_workers)
            cmd->add_option("--workers", workers,
                            "replicates run in parallel (default $JSQD_WORKERS or 1)");
    };

    CLI::App* design = app.add_subcommand(
        "design", "balance routing and emit a compatibility matrix");
    add_common(design, false);

    CLI::App* experiment =
        app.add_subcommand("experiment", "run one of the named studies");
    std::string which;
    experiment
        ->add_option("name", which,
                     "stability_compare | convergence | uniqueness | coupling")
        ->required();
    add_common(experiment, true);

    CLI11_PARSE(app, argc, argv);

    try {
        const jsqd::Config cfg = jsqd::Config::load(config_path);
        cfg.reject_unknown_keys();
        if (design->parsed()) {
            const jsqd::DesignRun run = jsqd::run_design(cfg, out_dir);
            std::printf("balanced per-type load %.10g\n", run.design.rho_star);
            for (size_t m = 0; m < run.design.margins.size(); ++m)
                std::printf("margin[%zu] = %.10g\n", m, run.design.margins[m]);
            std::printf("wrote %s/design_p.csv\n", out_dir.c_str());
            return 0;
        }

        if (which == "stability_compare") {
            const auto run = jsqd::run_stability_compare(cfg, out_dir, workers);
            std::printf(
                "complete graph had the longer type-0 queues in %d of %zu runs\n",
                run.wins_complete, run.final_complete_type0.size());
        } else if (which == "convergence") {
            const auto run = jsqd::run_convergence(cfg, out_dir, workers);
            for (size_t si = 0; si < run.sizes.size(); ++si) {
                double worst = 0.0;
                for (double e : run.sup_err[si]) worst = std::max(worst, e);
                std::printf("N=%d sup|mean sim - ode| on levels 1,2: %.6g\n",
                            run.sizes[si], worst);
            }
        } else if (which == "uniqueness") {
            const auto run = jsqd::run_uniqueness(cfg, out_dir);
            std::printf("max endpoint gap on level 1: %.6g\n", run.max_gap_q1);
        } else if (which == "coupling") {
            const auto run = jsqd::run_coupling_experiment(cfg, out_dir, workers);
            for (size_t si = 0; si < run.sizes.size(); ++si)
                std::printf("N=%d mean final mismatches per server: %.6g\n",
                            run.sizes[si],
                            run.mean_final_mismatch_per_server[si]);
            std::printf("bound verified at %lld events\n",
                        static_cast<long long>(run.bound_checks));
        } else {
            std::fprintf(stderr,
                         "unknown experiment '%s' (expected stability_compare, "
                         "convergence, uniqueness or coupling)\n",
                         which.c_str());
            return 1;
        }
        std::printf("outputs in %s\n", out_dir.c_str());
        return 0;
    } catch (const jsqd::CapacityError& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
