#ifndef M3VB_CLI_HPP
#define M3VB_CLI_HPP

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3vb/aggregator.hpp"
#include "m3vb/analysis.hpp"
#include "m3vb/experiment.hpp"

// Command line front end.
//   m3vb run <config> [--full] [--workers N] [--out DIR]
//   m3vb check
//   m3vb plot <records.csv> <plotspec>
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime failure.
// M3VB_SEED overrides the configured base seed.

namespace m3vb {

namespace clidetail {

struct CheckOutcome {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// The average of the m power-m subset objectives and the plain full-data
/// objective share their maximizer: run both routes and compare parameters.
inline CheckOutcome check_pooled_equivalence() {
    CheckOutcome out{"pooled-equivalence", false, ""};
    const std::size_t p = 2, n_rows = 200, m = 4;
    GenConfig gen;
    gen.kind = ModelKind::BLR;
    gen.n_rows = n_rows;
    gen.beta_star = {1.5, -0.75};
    gen.sigma = 1.0;
    RngStream rng(424242, 0);
    const Dataset data = generate_blr(gen, rng);
    RngStream prng(424242, 1);
    const Partition part = make_partition(n_rows, m, prng);
    const BlrPrior prior;

    std::vector<BlrBlockStats> blocks;
    for (const auto& rows : part.subsets) blocks.push_back(BlrBlockStats::from_rows(data, rows));

    // route one: maximize the average of the m power-m subset objectives.
    // The averaged powered likelihood carries weight m/m = 1 on the summed
    // per-block statistics, so the coordinate update runs at power one on the
    // subset-assembled sums.
    BlrBlockStats summed;
    summed.p = p;
    summed.xtx.assign(p * p, 0.0);
    summed.xty.assign(p, 0.0);
    for (const auto& b : blocks) {
        summed.n += b.n;
        for (std::size_t i = 0; i < p * p; ++i) summed.xtx[i] += b.xtx[i];
        for (std::size_t i = 0; i < p; ++i) summed.xty[i] += b.xty[i];
        summed.yty += b.yty;
    }
    BlrVariational q = blr_init(p, prior);
    for (int sweep = 0; sweep < 400; ++sweep) q = cavi_update_blr(q, prior, summed, 1);

    // route two: full-data power-1 VB through an independent assembly path
    const BlrVariational pooled = pooled_vb_blr(data, prior);
    double worst = 0.0;
    for (std::size_t l = 0; l < p; ++l) {
        worst = std::max(worst, std::abs(q.mu[l] - pooled.mu[l]));
        worst = std::max(worst, std::abs(q.s2[l] - pooled.s2[l]));
    }
    worst = std::max(worst, std::abs(q.c - pooled.c));
    worst = std::max(worst, std::abs(q.d - pooled.d));

    // the average powered ELBO, evaluated per subset, peaks at that optimum
    auto avg_powered_elbo = [&](const BlrVariational& state) {
        double acc = 0.0;
        for (const auto& b : blocks) acc += elbo_blr(state, prior, b, static_cast<int>(m));
        return acc / static_cast<double>(m);
    };
    const double at_opt = avg_powered_elbo(pooled);
    bool dominated = true;
    RngStream perturb(99, 2);
    for (int rep = 0; rep < 50; ++rep) {
        BlrVariational other = pooled;
        for (std::size_t l = 0; l < p; ++l) other.mu[l] += 0.05 * perturb.normal();
        dominated = dominated && avg_powered_elbo(other) <= at_opt + 1e-9;
    }

    out.pass = worst < 1e-6 && dominated;
    char buf[96];
    std::snprintf(buf, sizeof buf, "max parameter gap %.3g (tol 1e-6), dominance %s", worst,
                  dominated ? "held" : "violated");
    out.detail = buf;
    return out;
}

/// Solver against the brute-force grid oracle on blocks whose local
/// posteriors share a common precision.
inline CheckOutcome check_quadratic_minmax() {
    CheckOutcome out{"quadratic-minmax-median", false, ""};
    const std::size_t m = 15;
    const double omega = 4.0;
    RngStream rng(20240811, 5);
    std::vector<double> centers;
    for (std::size_t j = 0; j + 1 < m; ++j) centers.push_back(rng.normal(0.0, 0.5));
    centers.push_back(50.0);

    GaussLocSolverModel model;
    model.prior = GaussLocPrior{0.0, 1e8};
    model.noise_var = static_cast<double>(m);  // power m * 4 points / this = omega
    for (double c : centers) {
        std::vector<double> pts(4, c);
        model.block_stats.push_back(GaussLocBlockStats::from(pts));
    }
    AggregatorConfig cfg;
    cfg.iterations = 300;
    const auto result = minmax_median_solve(model, static_cast<int>(m), cfg);

    const auto oracle = brute_force_minmax_median(centers, omega, BruteForceGrid{1e-3, 1.0, 1e-2});
    const double mean_gap = std::abs(result.f.mean[0] - oracle.theta_f);
    const double var_rel = std::abs(result.f.var[0] - 1.0 / omega) * omega;
    out.pass = mean_gap < 1e-2 && var_rel < 0.05;
    char buf[128];
    std::snprintf(buf, sizeof buf, "mean gap %.3g (tol 1e-2), variance rel. err %.3g (tol 0.05)",
                  mean_gap, var_rel);
    out.detail = buf;
    return out;
}

/// Powering a marginal with a local latent variable moves its population
/// maximizer: exact enumeration on the binary example.
inline CheckOutcome check_powered_marginal_flip() {
    CheckOutcome out{"powered-marginal-flip", false, ""};
    DiscreteLatentModel model;
    model.p_s0_given_theta[0] = {3, 8};
    model.p_s0_given_theta[1] = {1, 2};
    model.p_x0_given_s_theta[0][0] = {5, 6};
    model.p_x0_given_s_theta[1][0] = {2, 5};
    model.p_x0_given_s_theta[0][1] = {11, 16};
    model.p_x0_given_s_theta[1][1] = {1, 4};
    std::vector<std::size_t> scan;
    for (std::size_t m = 1; m <= 64; ++m) scan.push_back(m);
    const auto rep = discrete_inconsistency_check(model, scan);
    out.pass = rep.marginal_argmax == 0 && rep.limit_argmax == 1 && rep.first_flip_m.has_value();
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "marginal argmax %d, limit argmax %d, first flip at m=%zu",
                  rep.marginal_argmax, rep.limit_argmax,
                  rep.first_flip_m.value_or(0));
    out.detail = buf;
    return out;
}

inline std::string sanitize_filename(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return s;
}

struct PlotSpec {
    std::string kind;  // lineplot | boxplot
    std::string x = "n";
    std::string y = "l2_error";
    std::string series = "mode";
    std::vector<std::string> group = {"mode"};
    std::string out;
    bool log_x = false;
};

inline PlotSpec parse_plotspec(const std::string& text) {
    PlotSpec spec;
    const auto colon = text.find(':');
    spec.kind = text.substr(0, colon);
    if (spec.kind != "lineplot" && spec.kind != "boxplot")
        throw std::invalid_argument("plotspec kind must be 'lineplot' or 'boxplot'");
    if (colon == std::string::npos) return spec;
    const std::string rest = text.substr(colon + 1);
    if (rest == "error-vs-n") return spec;
    if (rest == "kl-vs-n") {
        spec.y = "kl_to_reference";
        return spec;
    }
    if (rest == "time-vs-n") {
        spec.y = "wall_time_seconds";
        return spec;
    }
    std::istringstream in(rest);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("plotspec entries must look like key=value");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        if (key == "x") spec.x = value;
        else if (key == "y" || key == "value") spec.y = value;
        else if (key == "series") spec.series = value;
        else if (key == "out") spec.out = value;
        else if (key == "logx") spec.log_x = value == "true" || value == "1";
        else if (key == "group") {
            spec.group.clear();
            std::istringstream gs(value);
            std::string g;
            while (std::getline(gs, g, '+')) spec.group.push_back(g);
        } else {
            throw std::invalid_argument("unknown plotspec key '" + key + "'");
        }
    }
    return spec;
}

}  // namespace clidetail

inline int cli_main(int argc, char** argv) {
    CLI::App app{"min-max median aggregation of subset variational posteriors"};
    app.require_subcommand(1);

    std::string config_path, out_dir, csv_path, plotspec;
    bool full_grid = false;
    int workers = 0;

    auto* run = app.add_subcommand("run", "execute an experiment sweep from a config file");
    run->add_option("config", config_path, "experiment config file")->required();
    run->add_flag("--full", full_grid, "replace the grids with the full simulation protocol");
    run->add_option("--workers", workers, "parallel worker count");
    run->add_option("--out", out_dir, "output directory override");

    auto* check = app.add_subcommand("check", "run the built-in solver verifications");

    auto* plot = app.add_subcommand("plot", "render a plot from a records.csv");
    plot->add_option("csv", csv_path, "records.csv produced by 'run'")->required();
    plot->add_option("spec", plotspec, "plot spec, e.g. lineplot:error-vs-n")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    }

    if (run->parsed()) {
        ExperimentConfig cfg;
        try {
            cfg = experiment_config_from(Config::parse_file(config_path));
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
        if (full_grid) {
            cfg.n_grid = {100, 200, 400, 600, 1000, 1500, 2000};
            cfg.m_grid = {20, 30, 40};
            cfg.repetitions = 100;
        }
        if (workers > 0) cfg.workers = workers;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (const char* env = std::getenv("M3VB_SEED")) {
            try {
                cfg.base_seed = std::stoull(env);
            } catch (const std::exception&) {
                std::cerr << "config error: M3VB_SEED is not an unsigned integer\n";
                return 2;
            }
        }
        try {
            const auto records = run_experiment(cfg);
            std::size_t failures = 0;
            for (const auto& r : records)
                if (r.status != "ok") ++failures;
            std::cout << "wrote " << records.size() << " records to " << cfg.output_dir
                      << "/records.csv";
            if (failures > 0) std::cout << " (" << failures << " runs recorded errors)";
            std::cout << "\n";
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "runtime error: " << e.what() << "\n";
            return 3;
        }
    }

    if (check->parsed()) {
        int failures = 0;
        for (const auto& outcome : {clidetail::check_pooled_equivalence(),
                                    clidetail::check_quadratic_minmax(),
                                    clidetail::check_powered_marginal_flip()}) {
            std::cout << (outcome.pass ? "PASS" : "FAIL") << "  " << outcome.name << ": "
                      << outcome.detail << "\n";
            if (!outcome.pass) ++failures;
        }
        return failures == 0 ? 0 : 3;
    }

    if (plot->parsed()) {
        clidetail::PlotSpec spec;
        std::vector<RunRecord> records;
        try {
            spec = clidetail::parse_plotspec(plotspec);
            records = records_from_csv(csv_path);
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
        try {
            std::string out = spec.out;
            if (out.empty()) {
                const auto dir = std::filesystem::path(csv_path).parent_path();
                out = (dir / (clidetail::sanitize_filename(plotspec) + ".svg")).string();
            }
            if (spec.kind == "lineplot")
                emit_lineplot(records, spec.x, spec.y, spec.series, out, spec.log_x);
            else
                emit_boxplot(records, spec.group, spec.y, out);
            std::cout << "wrote " << out << "\n";
            return 0;
        } catch (const std::invalid_argument& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "runtime error: " << e.what() << "\n";
            return 3;
        }
    }
    return 1;
}

}  // namespace m3vb

#endif  // M3VB_CLI_HPP
