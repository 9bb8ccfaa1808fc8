#ifndef M3VB_EXPERIMENT_HPP
#define M3VB_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "m3vb/aggregator.hpp"
#include "m3vb/analysis.hpp"
#include "m3vb/config.hpp"
#include "m3vb/core.hpp"
#include "m3vb/data.hpp"
#include "m3vb/plot.hpp"

// Configuration-driven experiment sweeps: grids over (m, n) x mode x seeded
// repetition, per-run metrics, a stable CSV table and summary SVG plots. The
// whole pipeline is a pure function of (config, base_seed); the wall-time
// column is the only nondeterministic field. Repetitions run concurrently on
// a configurable worker count; records are key-sorted before serialization so
// parallelism never changes the output bytes.

namespace m3vb {

struct ExperimentConfig {
    ModelKind model = ModelKind::BLR;
    std::vector<std::size_t> n_grid;
    std::vector<std::size_t> m_grid;
    double alpha = 0.0;
    std::vector<AggregatorMode> modes;
    int repetitions = 1;
    std::uint64_t base_seed = 20240811;
    std::string output_dir = "m3vb_out";
    int workers = 2;
    bool compute_kl = false;

    BlrPrior blr_prior;
    GmmPrior gmm_prior;
    std::vector<double> beta_star{2.0, -1.0, 0.5, 0.0, 1.5, -0.5};
    double sigma = 1.0;
    std::vector<double> theta_star{-3.0, 0.0, 3.0};
    std::vector<double> weights;  // defaults to equal
    std::optional<ContaminationScheme> contamination;  // defaults per model

    int iterations = 500;
    int inner_sweeps = 1;
    double convergence_tol = 1e-8;
    double tail_average = 0.5;

    std::size_t param_dim() const {
        return model == ModelKind::BLR ? beta_star.size() : theta_star.size();
    }

    void validate() const {
        if (n_grid.empty() || m_grid.empty()) throw ConfigError("experiment: empty n_grid or m_grid");
        if (modes.empty()) throw ConfigError("experiment: no modes requested");
        if (repetitions < 1) throw ConfigError("experiment: repetitions must be >= 1");
        if (alpha < 0.0 || alpha >= 0.5) throw ConfigError("experiment: alpha must be in [0, 0.5)");
        if (workers < 1) throw ConfigError("experiment: workers must be >= 1");
        if (model == ModelKind::BLR && beta_star.empty()) throw ConfigError("experiment: beta_star empty");
        if (model == ModelKind::GMM && theta_star.empty()) throw ConfigError("experiment: theta_star empty");
    }
};

/// One row of the results table.
struct RunRecord {
    std::string model;
    std::string mode;
    std::size_t m = 0;
    std::size_t n = 0;
    double alpha = 0.0;
    int repetition = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    double l2_error = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> kl_to_reference;
    std::vector<double> means;
    double wall_time_seconds = 0.0;
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// status text lands in a comma-separated cell
inline std::string sanitize_cell(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

}  // namespace detail

/// Serialize records with a fixed, documented schema. Floats carry 17
/// significant digits so the table round-trips exactly.
inline std::string records_to_csv(const std::vector<RunRecord>& records, std::size_t param_dim) {
    std::ostringstream out;
    out << "model,mode,m,n,alpha,repetition,seed,status,l2_error,kl_to_reference,wall_time_seconds";
    for (std::size_t l = 0; l < param_dim; ++l) out << ",mean_" << (l + 1);
    out << "\n";
    for (const auto& r : records) {
        out << r.model << ',' << r.mode << ',' << r.m << ',' << r.n << ','
            << detail::fmt17(r.alpha) << ',' << r.repetition << ',' << r.seed << ','
            << detail::sanitize_cell(r.status) << ','
            << (std::isnan(r.l2_error) ? "" : detail::fmt17(r.l2_error)) << ','
            << (r.kl_to_reference ? detail::fmt17(*r.kl_to_reference) : "") << ','
            << detail::fmt17(r.wall_time_seconds);
        for (std::size_t l = 0; l < param_dim; ++l)
            out << ',' << (l < r.means.size() ? detail::fmt17(r.means[l]) : "");
        out << "\n";
    }
    return out.str();
}

inline std::vector<RunRecord> records_from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("records_from_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("records_from_csv: empty file");
    std::vector<RunRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> tok;
        std::string cur;
        std::istringstream is(line);
        while (std::getline(is, cur, ',')) tok.push_back(cur);
        while (tok.size() < 11) tok.emplace_back();
        RunRecord r;
        r.model = tok[0];
        r.mode = tok[1];
        r.m = std::stoull(tok[2]);
        r.n = std::stoull(tok[3]);
        r.alpha = std::stod(tok[4]);
        r.repetition = std::stoi(tok[5]);
        r.seed = std::stoull(tok[6]);
        r.status = tok[7];
        r.l2_error = tok[8].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(tok[8]);
        if (!tok[9].empty()) r.kl_to_reference = std::stod(tok[9]);
        r.wall_time_seconds = tok[10].empty() ? 0.0 : std::stod(tok[10]);
        for (std::size_t i = 11; i < tok.size(); ++i)
            if (!tok[i].empty()) r.means.push_back(std::stod(tok[i]));
        out.push_back(std::move(r));
    }
    return out;
}

namespace detail {

inline double record_numeric_field(const RunRecord& r, const std::string& field) {
    if (field == "n") return static_cast<double>(r.n);
    if (field == "m") return static_cast<double>(r.m);
    if (field == "alpha") return r.alpha;
    if (field == "repetition") return r.repetition;
    if (field == "l2_error") return r.l2_error;
    if (field == "wall_time_seconds") return r.wall_time_seconds;
    if (field == "kl_to_reference")
        return r.kl_to_reference ? *r.kl_to_reference : std::numeric_limits<double>::quiet_NaN();
    throw std::invalid_argument("unknown numeric record field '" + field + "'");
}

inline std::string record_label_field(const RunRecord& r, const std::string& field) {
    if (field == "mode") return r.mode;
    if (field == "model") return r.model;
    if (field == "m") return std::to_string(r.m);
    if (field == "n") return std::to_string(r.n);
    if (field == "alpha") return fmt17(r.alpha);
    throw std::invalid_argument("unknown label record field '" + field + "'");
}

}  // namespace detail

/// Medians-with-IQR line plot of `y` against `x`, one series per distinct
/// value of `series`.
inline void emit_lineplot(const std::vector<RunRecord>& records, const std::string& x,
                          const std::string& y, const std::string& series,
                          const std::string& path, bool log_x = false) {
    if (records.empty()) throw std::invalid_argument("emit_lineplot: no records");
    std::map<std::string, std::map<double, std::vector<double>>> bucket;
    for (const auto& r : records) {
        const double yv = detail::record_numeric_field(r, y);
        if (std::isnan(yv)) continue;
        bucket[detail::record_label_field(r, series)][detail::record_numeric_field(r, x)].push_back(yv);
    }
    std::vector<LineSeries> ls;
    for (auto& [label, groups] : bucket) {
        LineSeries s;
        s.label = label;
        for (auto& [xv, vals] : groups) s.groups.emplace_back(xv, std::move(vals));
        ls.push_back(std::move(s));
    }
    if (ls.empty()) throw std::invalid_argument("emit_lineplot: no finite values for field '" + y + "'");
    emit_lineplot_svg(ls, x, y, path, log_x);
}

/// Box plot of `value` grouped by the concatenation of the group fields.
inline void emit_boxplot(const std::vector<RunRecord>& records,
                         const std::vector<std::string>& group_by, const std::string& value,
                         const std::string& path) {
    if (records.empty()) throw std::invalid_argument("emit_boxplot: no records");
    if (group_by.empty()) throw std::invalid_argument("emit_boxplot: no grouping fields");
    std::map<std::string, std::vector<double>> bucket;
    for (const auto& r : records) {
        std::string key;
        for (std::size_t i = 0; i < group_by.size(); ++i) {
            if (i > 0) key += " ";
            key += detail::record_label_field(r, group_by[i]);
        }
        const double v = detail::record_numeric_field(r, value);
        auto& vec = bucket[key];
        if (!std::isnan(v)) vec.push_back(v);
    }
    std::vector<BoxGroup> groups;
    for (auto& [label, vals] : bucket) groups.push_back({label, std::move(vals)});
    emit_boxplot_svg(groups, value, path);
}

namespace detail {

struct CellReference {
    FisherEstimate fisher;
};

/// Reference information for kl_to_reference, estimated once per grid cell
/// from a dedicated large clean sample at the pooled estimate.
inline CellReference prepare_reference(const ExperimentConfig& cfg, std::size_t n, std::size_t m) {
    const std::size_t sample = std::max<std::size_t>(10000, n * m);
    GenConfig gen;
    gen.kind = cfg.model;
    gen.n_rows = sample;
    gen.beta_star = cfg.beta_star;
    gen.sigma = cfg.sigma;
    gen.theta_star = cfg.theta_star;
    gen.weights = cfg.weights;
    RngStream rng(mix_seed(cfg.base_seed, n, m, 0xF15E), 0);
    CellReference ref;
    if (cfg.model == ModelKind::BLR) {
        const Dataset d = generate_blr(gen, rng);
        const BlrVariational pooled = pooled_vb_blr(d, cfg.blr_prior);
        ref.fisher = fisher_diag_blr(d, pooled.sigma2_mean());
    } else {
        const Dataset d = generate_gmm(gen, rng);
        const GmmVariational pooled =
            pooled_vb_gmm(d, cfg.gmm_prior, cfg.theta_star.size(), mix_seed(cfg.base_seed, 0xF15E));
        // records store components in ascending-mean order; match it here
        std::vector<std::size_t> idx(pooled.mean.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return pooled.mean[a] < pooled.mean[b]; });
        std::vector<double> sorted_mean;
        for (std::size_t i : idx) sorted_mean.push_back(pooled.mean[i]);
        const auto fisher = fisher_diag_gmm(d, sorted_mean);
        ref.fisher = fisher;
    }
    return ref;
}

inline ReferenceGaussian reference_at(const std::vector<double>& state_mean,
                                      const CellReference& cell, std::size_t m, std::size_t n) {
    ReferenceGaussian ref;
    ref.mean = state_mean;
    ref.precision_diag = cell.fisher.diag;
    ref.m = m;
    ref.n = n;
    return ref;
}

template <class F>
void parallel_for(std::size_t count, int workers, F&& body) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int use = std::min<int>(workers, static_cast<int>(count));
    pool.reserve(static_cast<std::size_t>(use));
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mutex;
    for (int w = 0; w < use; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!failed.exchange(true)) first_error = e.what();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed) throw std::runtime_error("experiment worker failed: " + first_error);
}

}  // namespace detail

/// Execute the full sweep and write `records.csv` plus summary plots into
/// cfg.output_dir. Per-run solver errors are recorded in the status column
/// without aborting the sweep.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.weights.empty() && cfg.model == ModelKind::GMM)
        cfg.weights.assign(cfg.theta_star.size(), 1.0 / static_cast<double>(cfg.theta_star.size()));
    cfg.validate();
    const ContaminationScheme scheme =
        cfg.contamination ? *cfg.contamination : ContaminationScheme::defaults_for(cfg.model);

    struct Task {
        std::size_t n, m;
        int rep;
        std::size_t cell;
    };
    std::vector<Task> tasks;
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t n : cfg.n_grid)
        for (std::size_t m : cfg.m_grid) cells.emplace_back(n, m);
    for (std::size_t c = 0; c < cells.size(); ++c)
        for (int rep = 0; rep < cfg.repetitions; ++rep)
            tasks.push_back({cells[c].first, cells[c].second, rep, c});

    std::vector<detail::CellReference> refs(cells.size());
    if (cfg.compute_kl)
        detail::parallel_for(cells.size(), cfg.workers, [&](std::size_t c) {
            refs[c] = detail::prepare_reference(cfg, cells[c].first, cells[c].second);
        });

    std::vector<std::vector<RunRecord>> results(tasks.size());
    detail::parallel_for(tasks.size(), cfg.workers, [&](std::size_t ti) {
        const Task& task = tasks[ti];
        const std::uint64_t seed = mix_seed(cfg.base_seed, task.n, task.m, static_cast<std::uint64_t>(task.rep));
        GenConfig gen;
        gen.kind = cfg.model;
        gen.n_rows = task.n * task.m;
        gen.beta_star = cfg.beta_star;
        gen.sigma = cfg.sigma;
        gen.theta_star = cfg.theta_star;
        gen.weights = cfg.weights;

        RngStream data_rng(seed, 0);
        const Dataset clean = cfg.model == ModelKind::BLR ? generate_blr(gen, data_rng)
                                                          : generate_gmm(gen, data_rng);
        RngStream part_rng(seed, 1);
        const Partition part0 = make_partition(clean.n_rows, task.m, part_rng);
        RngStream cont_rng(seed, 2);
        auto [data, part] = contaminate(clean, part0, cfg.alpha, scheme, cont_rng);

        AggregatorConfig acfg;
        acfg.iterations = cfg.iterations;
        acfg.inner_sweeps = cfg.inner_sweeps;
        acfg.convergence_tol = cfg.convergence_tol;
        acfg.tail_average = cfg.tail_average;
        acfg.seed = mix_seed(seed, 3);

        for (AggregatorMode mode : cfg.modes) {
            RunRecord rec;
            rec.model = to_string(cfg.model);
            rec.mode = to_string(mode);
            rec.m = task.m;
            rec.n = task.n;
            rec.alpha = cfg.alpha;
            rec.repetition = task.rep;
            rec.seed = seed;
            detail::StopWatch watch;
            try {
                acfg.mode = mode;
                std::vector<double> means;
                std::vector<double> vars;
                if (cfg.model == ModelKind::BLR) {
                    BlrVariational state;
                    switch (mode) {
                        case AggregatorMode::M3VB_ONE_STEP:
                            state = m3vb_no_latent(data, part, cfg.blr_prior, acfg).f;
                            break;
                        case AggregatorMode::M3VB_TWO_STEP:
                            state = m3vb_two_step_blr(data, part, cfg.blr_prior, acfg).f;
                            break;
                        case AggregatorMode::MVB:
                            state = mvb_direct_median(data, part, cfg.blr_prior, acfg).f;
                            break;
                        case AggregatorMode::POOLED:
                            state = pooled_vb_blr(clean, cfg.blr_prior);
                            break;
                        case AggregatorMode::WASP:
                            state = wasp_barycenter(local_vb_blr(data, part, cfg.blr_prior));
                            break;
                        case AggregatorMode::MINMAX_POINT: {
                            BlrPointLoss loss = BlrPointLoss::from(data, part);
                            means = minmax_point_solve(loss, loss.ols_median_init(),
                                                       loss.ols_mean_init(), acfg)
                                        .theta;
                            break;
                        }
                    }
                    if (mode != AggregatorMode::MINMAX_POINT) {
                        means = state.mu;
                        vars = state.s2;
                    }
                    rec.l2_error = l2_error(means, cfg.beta_star, false);
                } else {
                    GmmVariational state;
                    const std::size_t k = cfg.theta_star.size();
                    switch (mode) {
                        case AggregatorMode::M3VB_ONE_STEP:
                            state = m3vb_latent_one_step(data, part, cfg.gmm_prior, k, acfg).f;
                            break;
                        case AggregatorMode::M3VB_TWO_STEP:
                            state = m3vb_latent(data, part, cfg.gmm_prior, k, acfg).f;
                            break;
                        case AggregatorMode::MVB:
                            throw std::invalid_argument("mvb needs a tractable evidence; unsupported for gmm");
                        case AggregatorMode::POOLED:
                            state = pooled_vb_gmm(clean, cfg.gmm_prior, k, acfg.seed);
                            break;
                        case AggregatorMode::WASP:
                            state = wasp_barycenter(local_vb_gmm(data, part, cfg.gmm_prior, k, acfg.seed));
                            break;
                        case AggregatorMode::MINMAX_POINT: {
                            GmmPointLoss loss = GmmPointLoss::from(data, part, k);
                            auto init_f = loss.quantile_init();
                            auto init_g = init_f;
                            for (auto& v : init_g) v += 0.05;
                            means = minmax_point_solve(loss, init_f, init_g, acfg).theta;
                            break;
                        }
                    }
                    if (mode != AggregatorMode::MINMAX_POINT) {
                        // canonical ascending order; labels are exchangeable
                        std::vector<std::size_t> idx(state.k());
                        std::iota(idx.begin(), idx.end(), std::size_t{0});
                        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                            return state.mean[a] < state.mean[b];
                        });
                        for (std::size_t i : idx) {
                            means.push_back(state.mean[i]);
                            vars.push_back(state.s2[i]);
                        }
                    }
                    rec.l2_error = l2_error(means, cfg.theta_star, true);
                }
                rec.means = means;
                if (cfg.compute_kl && !vars.empty()) {
                    const auto ref = detail::reference_at(means, refs[task.cell], task.m, task.n);
                    rec.kl_to_reference = kl_to_reference(DiagGaussian(means, vars), ref);
                }
            } catch (const std::exception& e) {
                rec.status = std::string("error:") + e.what();
            }
            rec.wall_time_seconds = watch.seconds();
            results[ti].push_back(std::move(rec));
        }
    });

    std::vector<RunRecord> records;
    for (auto& chunk : results)
        for (auto& r : chunk) records.push_back(std::move(r));
    std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.model, a.mode, a.m, a.n, a.repetition) <
               std::tie(b.model, b.mode, b.m, b.n, b.repetition);
    });

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream out(fs::path(cfg.output_dir) / "records.csv", std::ios::binary);
        if (!out) throw std::runtime_error("run_experiment: cannot write records.csv");
        out << records_to_csv(records, cfg.param_dim());
    }
    try {
        emit_lineplot(records, "n", "l2_error", "mode",
                      (fs::path(cfg.output_dir) / "error_vs_n.svg").string());
        emit_boxplot(records, {"mode", "n"}, "l2_error",
                     (fs::path(cfg.output_dir) / "error_boxplot.svg").string());
        if (cfg.compute_kl)
            emit_lineplot(records, "n", "kl_to_reference", "mode",
                          (fs::path(cfg.output_dir) / "kl_vs_n.svg").string());
    } catch (const std::invalid_argument&) {
        // no finite metric values (e.g. every run errored); the CSV still records why
    }
    return records;
}

/// Parse an ExperimentConfig from the flat-sectioned key-value format.
inline ExperimentConfig experiment_config_from(const Config& c) {
    ExperimentConfig cfg;
    const std::string model = c.require_string("experiment", "model");
    if (model == "blr")
        cfg.model = ModelKind::BLR;
    else if (model == "gmm")
        cfg.model = ModelKind::GMM;
    else
        throw ConfigError("[experiment] model must be 'blr' or 'gmm'");
    for (long long v : c.get_ints("experiment", "n_grid")) cfg.n_grid.push_back(static_cast<std::size_t>(v));
    for (long long v : c.get_ints("experiment", "m_grid")) cfg.m_grid.push_back(static_cast<std::size_t>(v));
    cfg.alpha = c.get_double("experiment", "alpha", 0.0);
    for (const auto& s : c.get_strings("experiment", "modes"))
        cfg.modes.push_back(aggregator_mode_from_string(s));
    cfg.repetitions = static_cast<int>(c.get_int("experiment", "repetitions", 1));
    cfg.base_seed = c.get_u64("experiment", "base_seed", 20240811);
    cfg.output_dir = c.get_string("experiment", "output_dir", "m3vb_out");
    cfg.workers = static_cast<int>(c.get_int("experiment", "workers", 2));
    cfg.compute_kl = c.get_bool("experiment", "compute_kl", false);

    cfg.blr_prior.alpha = c.get_double("prior", "alpha", 100.0);
    cfg.blr_prior.a0 = c.get_double("prior", "a0", 2.0);
    cfg.blr_prior.b0 = c.get_double("prior", "b0", 2.0);
    cfg.gmm_prior.sigma0_sq = c.get_double("prior", "sigma0_sq", 100.0);

    cfg.beta_star = c.get_doubles("generator", "beta_star", cfg.beta_star);
    cfg.sigma = c.get_double("generator", "sigma", 1.0);
    cfg.theta_star = c.get_doubles("generator", "theta_star", cfg.theta_star);
    cfg.weights = c.get_doubles("generator", "weights", {});
    if (c.has("generator", "contamination_mean") || c.has("generator", "contamination_var")) {
        ContaminationScheme s = ContaminationScheme::defaults_for(cfg.model);
        s.mean = c.get_double("generator", "contamination_mean", s.mean);
        s.var = c.get_double("generator", "contamination_var", s.var);
        cfg.contamination = s;
    }

    cfg.iterations = static_cast<int>(c.get_int("solver", "iterations", 500));
    cfg.inner_sweeps = static_cast<int>(c.get_int("solver", "inner_sweeps", 1));
    cfg.convergence_tol = c.get_double("solver", "convergence_tol", 1e-8);
    cfg.tail_average = c.get_double("solver", "tail_average", 0.5);
    cfg.validate();
    return cfg;
}

}  // namespace m3vb

#endif  // M3VB_EXPERIMENT_HPP
