#ifndef M3VB_AGGREGATOR_HPP
#define M3VB_AGGREGATOR_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3vb/blr.hpp"
#include "m3vb/core.hpp"
#include "m3vb/data.hpp"
#include "m3vb/gauss_loc.hpp"
#include "m3vb/gmm.hpp"

// Solvers. The min-max median scheme alternates two mean-field states F and
// G: each half-iteration recomputes every block's ELBO difference
// ELBO_j(G) - ELBO_j(F), selects the block attaining the lower median of the
// gaps, and runs one CAVI sweep of the corresponding side on that block.
// Variants differ only in the likelihood power and an optional final variance
// rescale. Baselines: pooled VB, a direct-median solver that needs per-block
// evidence values, a closed-form Wasserstein barycenter of diagonal
// Gaussians, and an alternating-gradient point estimator.

namespace m3vb {

enum class AggregatorMode {
    M3VB_ONE_STEP,   // power = m, no rescale
    M3VB_TWO_STEP,   // power = 1, variance rescale by 1/m
    MVB,             // direct median of evidence-normalized gaps
    POOLED,          // standard VB on the full dataset
    WASP,            // barycenter of per-subset power-1 fits
    MINMAX_POINT,    // alternating-gradient point estimator
};

inline const char* to_string(AggregatorMode m) {
    switch (m) {
        case AggregatorMode::M3VB_ONE_STEP: return "m3vb_one_step";
        case AggregatorMode::M3VB_TWO_STEP: return "m3vb_two_step";
        case AggregatorMode::MVB: return "mvb";
        case AggregatorMode::POOLED: return "pooled";
        case AggregatorMode::WASP: return "wasp";
        case AggregatorMode::MINMAX_POINT: return "minmax_point";
    }
    return "unknown";
}

inline AggregatorMode aggregator_mode_from_string(const std::string& s) {
    if (s == "m3vb_one_step") return AggregatorMode::M3VB_ONE_STEP;
    if (s == "m3vb_two_step") return AggregatorMode::M3VB_TWO_STEP;
    if (s == "mvb") return AggregatorMode::MVB;
    if (s == "pooled") return AggregatorMode::POOLED;
    if (s == "wasp") return AggregatorMode::WASP;
    if (s == "minmax_point") return AggregatorMode::MINMAX_POINT;
    throw std::invalid_argument("unknown aggregator mode '" + s + "'");
}

/// When several blocks attain the median gap exactly, STICKY re-selects the
/// block updated in the previous half-iteration if it is among them; this
/// keeps engineered all-tied instances at their equilibrium instead of
/// cycling. SMALLEST_INDEX always takes the first attaining block.
enum class TieRule { STICKY, SMALLEST_INDEX };

struct AggregatorConfig {
    AggregatorMode mode = AggregatorMode::M3VB_ONE_STEP;
    int iterations = 500;
    int inner_sweeps = 1;
    double convergence_tol = 1e-8;
    std::uint64_t seed = 0;
    TieRule tie_rule = TieRule::STICKY;
    bool record_gap_vectors = false;
    // Fraction of final iterations whose F/G iterates are averaged into the
    // returned states. The alternating best-response dynamics oscillate among
    // near-median blocks in conjugate models; the tail average is the
    // stable approximation of the saddle those oscillations surround. Zero
    // returns the literal final iterate.
    double tail_average = 0.5;

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("AggregatorConfig: iterations must be >= 1");
        if (inner_sweeps < 1) throw std::invalid_argument("AggregatorConfig: inner_sweeps must be >= 1");
        if (!(convergence_tol > 0.0))
            throw std::invalid_argument("AggregatorConfig: convergence_tol must be positive");
        if (tail_average < 0.0 || tail_average > 1.0)
            throw std::invalid_argument("AggregatorConfig: tail_average must be in [0, 1]");
    }
};

struct TraceItem {
    int iteration = 0;
    char side = 'F';
    std::size_t block = 0;
    double median_gap = 0.0;
};

struct SolverTrace {
    std::vector<TraceItem> items;
    std::vector<std::vector<double>> gap_vectors;  // parallel to items when recorded
};

template <class State>
struct AggregateResult {
    State f;
    State g;
    SolverTrace trace;
    double wall_seconds = 0.0;
};

namespace detail {

inline std::size_t select_block(const std::vector<double>& gaps, double median_value,
                                std::size_t median_idx, TieRule rule,
                                std::ptrdiff_t previous) {
    if (rule == TieRule::STICKY && previous >= 0 &&
        gaps[static_cast<std::size_t>(previous)] == median_value)
        return static_cast<std::size_t>(previous);
    return median_idx;
}

inline void state_axpy(BlrVariational& acc, const BlrVariational& s, double w) {
    for (std::size_t l = 0; l < acc.p(); ++l) {
        acc.mu[l] += w * s.mu[l];
        acc.s2[l] += w * s.s2[l];
    }
    acc.c += w * s.c;
    acc.d += w * s.d;
}

inline void state_axpy(GmmVariational& acc, const GmmVariational& s, double w) {
    for (std::size_t c = 0; c < acc.k(); ++c) {
        acc.mean[c] += w * s.mean[c];
        acc.s2[c] += w * s.s2[c];
    }
}

inline void state_axpy(DiagGaussian& acc, const DiagGaussian& s, double w) {
    for (std::size_t l = 0; l < acc.dim(); ++l) {
        acc.mean[l] += w * s.mean[l];
        acc.var[l] += w * s.var[l];
    }
}

template <class State>
State zero_like(State s) {
    state_axpy(s, s, -1.0);
    return s;
}

/// Mean of iterates[from..end). Assumes a nonempty range.
template <class State>
State tail_mean(const std::vector<State>& iterates, std::size_t from) {
    State acc = zero_like(iterates.back());
    const double w = 1.0 / static_cast<double>(iterates.size() - from);
    for (std::size_t i = from; i < iterates.size(); ++i) state_axpy(acc, iterates[i], w);
    return acc;
}

template <class State>
State finalize_side(const std::vector<State>& iterates, double tail_fraction) {
    const auto count = static_cast<std::size_t>(
        std::floor(tail_fraction * static_cast<double>(iterates.size())));
    if (count <= 1) return iterates.back();
    return tail_mean(iterates, iterates.size() - count);
}

inline double state_max_abs_diff(const BlrVariational& a, const BlrVariational& b) {
    double d = std::max(std::abs(a.c - b.c), std::abs(a.d - b.d));
    for (std::size_t l = 0; l < a.p(); ++l) {
        d = std::max(d, std::abs(a.mu[l] - b.mu[l]));
        d = std::max(d, std::abs(a.s2[l] - b.s2[l]));
    }
    return d;
}

inline double state_max_abs_diff(const GmmVariational& a, const GmmVariational& b) {
    double d = 0.0;
    for (std::size_t c = 0; c < a.k(); ++c) {
        d = std::max(d, std::abs(a.mean[c] - b.mean[c]));
        d = std::max(d, std::abs(a.s2[c] - b.s2[c]));
    }
    return d;
}

inline double state_max_abs_diff(const DiagGaussian& a, const DiagGaussian& b) {
    double d = 0.0;
    for (std::size_t l = 0; l < a.dim(); ++l) {
        d = std::max(d, std::abs(a.mean[l] - b.mean[l]));
        d = std::max(d, std::abs(a.var[l] - b.var[l]));
    }
    return d;
}

class StopWatch {
  public:
    StopWatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Generic alternating median-block solver. Model requirements:
///   using State; size_t blocks(); State init() const;
///   double elbo(const State&, size_t j, int power) const;
///   void sweep(State&, size_t j, int power) const;
/// Runs for cfg.iterations or stops early once the F-side median gap moves
/// by less than convergence_tol for 10 consecutive iterations.
template <class Model>
AggregateResult<typename Model::State> minmax_median_solve(
    const Model& model, int power, const AggregatorConfig& cfg,
    std::optional<typename Model::State> init = std::nullopt) {
    cfg.validate();
    const std::size_t m = model.blocks();
    if (m == 0) throw std::invalid_argument("minmax_median_solve: no blocks");
    detail::StopWatch watch;

    AggregateResult<typename Model::State> result;
    result.f = init ? *init : model.init();
    result.g = result.f;

    std::vector<double> gaps(m);
    std::ptrdiff_t prev_f = -1, prev_g = -1;
    double last_median = std::numeric_limits<double>::quiet_NaN();
    int stable = 0;
    std::vector<typename Model::State> f_iterates, g_iterates;
    f_iterates.reserve(static_cast<std::size_t>(cfg.iterations));
    g_iterates.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int t = 1; t <= cfg.iterations; ++t) {
        for (std::size_t j = 0; j < m; ++j)
            gaps[j] = model.elbo(result.g, j, power) - model.elbo(result.f, j, power);
        auto [jf_med, gap_f] = median_index(gaps);
        const std::size_t jf = detail::select_block(gaps, gap_f, jf_med, cfg.tie_rule, prev_f);
        result.trace.items.push_back({t, 'F', jf, gap_f});
        if (cfg.record_gap_vectors) result.trace.gap_vectors.push_back(gaps);
        for (int s = 0; s < cfg.inner_sweeps; ++s) model.sweep(result.f, jf, power);
        prev_f = static_cast<std::ptrdiff_t>(jf);

        for (std::size_t j = 0; j < m; ++j)
            gaps[j] = model.elbo(result.g, j, power) - model.elbo(result.f, j, power);
        auto [jg_med, gap_g] = median_index(gaps);
        const std::size_t jg = detail::select_block(gaps, gap_g, jg_med, cfg.tie_rule, prev_g);
        result.trace.items.push_back({t, 'G', jg, gap_g});
        if (cfg.record_gap_vectors) result.trace.gap_vectors.push_back(gaps);
        for (int s = 0; s < cfg.inner_sweeps; ++s) model.sweep(result.g, jg, power);
        prev_g = static_cast<std::ptrdiff_t>(jg);

        // stable means both the median gap and the F iterate stopped moving
        const double f_delta = f_iterates.empty()
                                   ? std::numeric_limits<double>::infinity()
                                   : detail::state_max_abs_diff(result.f, f_iterates.back());
        f_iterates.push_back(result.f);
        g_iterates.push_back(result.g);

        if (t > 1 && std::abs(gap_f - last_median) < cfg.convergence_tol &&
            f_delta < cfg.convergence_tol)
            ++stable;
        else
            stable = 0;
        last_median = gap_f;
        if (stable >= 10) break;
    }
    result.f = detail::finalize_side(f_iterates, cfg.tail_average);
    result.g = detail::finalize_side(g_iterates, cfg.tail_average);
    result.wall_seconds = watch.seconds();
    return result;
}

// Model adapters ------------------------------------------------------------

struct BlrSolverModel {
    using State = BlrVariational;
    BlrPrior prior;
    std::vector<BlrBlockStats> block_stats;
    std::size_t p = 0;

    BlrSolverModel(const Dataset& data, const Partition& part, BlrPrior prior_)
        : prior(prior_), p(data.n_cols) {
        data.validate();
        prior.validate();
        block_stats.reserve(part.m());
        for (const auto& rows : part.subsets)
            block_stats.push_back(BlrBlockStats::from_rows(data, rows));
    }

    std::size_t blocks() const { return block_stats.size(); }
    State init() const { return blr_init(p, prior); }
    double elbo(const State& s, std::size_t j, int power) const {
        return elbo_blr(s, prior, block_stats[j], power);
    }
    void sweep(State& s, std::size_t j, int power) const {
        s = cavi_update_blr(s, prior, block_stats[j], power);
    }
};

struct GmmSolverModel {
    using State = GmmVariational;
    GmmPrior prior;
    std::size_t k = 0;
    std::vector<std::vector<double>> block_points;
    GmmVariational initial;

    GmmSolverModel(const Dataset& data, const Partition& part, GmmPrior prior_, std::size_t k_,
                   std::uint64_t seed)
        : prior(prior_), k(k_) {
        data.validate();
        prior.validate();
        if (data.kind != ModelKind::GMM)
            throw std::invalid_argument("GmmSolverModel: dataset is not GMM");
        block_points.reserve(part.m());
        for (const auto& rows : part.subsets) {
            std::vector<double> pts;
            pts.reserve(rows.size());
            for (std::size_t i : rows) pts.push_back(data.x[i]);
            block_points.push_back(std::move(pts));
        }
        RngStream rng(seed, 0x1217);
        initial = gmm_init(data.x, k, rng);
    }

    std::size_t blocks() const { return block_points.size(); }
    State init() const { return initial; }
    // TODO: cache the unchanged side's per-block assignment factors between
    // half-iterations; recomputing both sides costs 2 m n K exponentials per
    // iteration and dominates mixture solves.
    double elbo(const State& s, std::size_t j, int power) const {
        return elbo_gmm(s, prior, block_points[j], power);
    }
    void sweep(State& s, std::size_t j, int power) const {
        s = cavi_update_gmm(s, prior, block_points[j], power);
    }
};

struct GaussLocSolverModel {
    using State = DiagGaussian;
    GaussLocPrior prior;
    double noise_var = 1.0;
    std::vector<GaussLocBlockStats> block_stats;

    std::size_t blocks() const { return block_stats.size(); }
    State init() const { return gauss_loc_init(prior); }
    double elbo(const State& s, std::size_t j, int power) const {
        return elbo_gauss_loc(s, prior, block_stats[j], noise_var, power);
    }
    void sweep(State& s, std::size_t j, int power) const {
        s = cavi_update_gauss_loc(s, prior, block_stats[j], noise_var, power);
    }
};

// Rescaling ------------------------------------------------------------------

/// Variance rescale by 1/m with the mean kept fixed.
inline DiagGaussian rescale(DiagGaussian dist, std::size_t m) {
    if (m == 0) throw std::invalid_argument("rescale: m must be >= 1");
    if (m == 1) return dist;
    for (auto& v : dist.var) v /= static_cast<double>(m);
    return dist;
}

inline GmmVariational rescale(GmmVariational dist, std::size_t m) {
    if (m == 0) throw std::invalid_argument("rescale: m must be >= 1");
    if (m == 1) return dist;
    for (auto& v : dist.s2) v /= static_cast<double>(m);
    return dist;
}

/// Gaussian factors: variance / m. Inverse-gamma factor: the (shape, scale)
/// pair is remapped so the mean is preserved exactly while the variance
/// shrinks by 1/m, via shape' - 2 = m (shape - 2) in IG(shape, scale) units.
inline BlrVariational rescale(BlrVariational dist, std::size_t m) {
    if (m == 0) throw std::invalid_argument("rescale: m must be >= 1");
    if (m == 1) return dist;
    for (auto& v : dist.s2) v /= static_cast<double>(m);
    if (dist.c <= 4.0)
        throw std::invalid_argument("rescale: inverse-gamma factor needs c > 4");
    const double mean = dist.sigma2_mean();
    dist.c = static_cast<double>(m) * (dist.c - 4.0) + 4.0;
    dist.d = mean * (dist.c - 2.0);
    return dist;
}

// Named solver entry points ---------------------------------------------------

namespace detail {

inline void require_median_blocks(std::size_t m, bool allow_single) {
    if (m >= 3) return;
    if (allow_single && m == 1) return;
    throw std::invalid_argument("min-max median solver needs m >= 3 subsets" +
                                std::string(allow_single ? " (or m == 1)" : ""));
}

}  // namespace detail

/// Min-max median aggregation at power m (models without local latent
/// variables). Returns the F side as the aggregated distribution.
inline AggregateResult<BlrVariational> m3vb_no_latent(const Dataset& data, const Partition& part,
                                                      const BlrPrior& prior,
                                                      const AggregatorConfig& cfg,
                                                      std::optional<BlrVariational> init = std::nullopt) {
    detail::require_median_blocks(part.m(), /*allow_single=*/false);
    BlrSolverModel model(data, part, prior);
    return minmax_median_solve(model, static_cast<int>(part.m()), cfg, std::move(init));
}

/// Two-step variant for models without latent variables: aggregate at power
/// one, then rescale the variances by 1/m.
inline AggregateResult<BlrVariational> m3vb_two_step_blr(const Dataset& data, const Partition& part,
                                                         const BlrPrior& prior,
                                                         const AggregatorConfig& cfg) {
    detail::require_median_blocks(part.m(), /*allow_single=*/true);
    BlrSolverModel model(data, part, prior);
    auto result = minmax_median_solve(model, 1, cfg);
    result.f = rescale(result.f, part.m());
    return result;
}

/// Aggregate-and-rescale for the latent-variable model: min-max median at
/// power one with the assignment factors maximized inside every evaluation,
/// then variance rescale by 1/m.
inline AggregateResult<GmmVariational> m3vb_latent(const Dataset& data, const Partition& part,
                                                   const GmmPrior& prior, std::size_t k,
                                                   const AggregatorConfig& cfg) {
    detail::require_median_blocks(part.m(), /*allow_single=*/true);
    GmmSolverModel model(data, part, prior, k, cfg.seed);
    auto result = minmax_median_solve(model, 1, cfg);
    result.f = rescale(result.f, part.m());
    return result;
}

/// Powered aggregation in the presence of latent variables; kept to exhibit
/// the bias of powering a marginal with local latent structure.
inline AggregateResult<GmmVariational> m3vb_latent_one_step(const Dataset& data,
                                                            const Partition& part,
                                                            const GmmPrior& prior, std::size_t k,
                                                            const AggregatorConfig& cfg) {
    detail::require_median_blocks(part.m(), /*allow_single=*/true);
    GmmSolverModel model(data, part, prior, k, cfg.seed);
    return minmax_median_solve(model, static_cast<int>(part.m()), cfg);
}

// Pooled VB -------------------------------------------------------------------

/// Standard CAVI to convergence on the full dataset at power one.
inline BlrVariational pooled_vb_blr(const Dataset& data, const BlrPrior& prior,
                                    int max_sweeps = 2000, double tol = 1e-12) {
    const BlrBlockStats st = BlrBlockStats::from_all(data);
    BlrVariational q = blr_init(data.n_cols, prior);
    double last = elbo_blr(q, prior, st, 1);
    for (int it = 0; it < max_sweeps; ++it) {
        q = cavi_update_blr(q, prior, st, 1);
        const double e = elbo_blr(q, prior, st, 1);
        if (std::abs(e - last) < tol) break;
        last = e;
    }
    return q;
}

inline GmmVariational pooled_vb_gmm(const Dataset& data, const GmmPrior& prior, std::size_t k,
                                    std::uint64_t seed, int max_sweeps = 2000, double tol = 1e-12) {
    if (data.kind != ModelKind::GMM)
        throw std::invalid_argument("pooled_vb_gmm: dataset is not GMM");
    RngStream rng(seed, 0x1217);
    GmmVariational q = gmm_init(data.x, k, rng);
    double last = elbo_gmm(q, prior, data.x, 1);
    for (int it = 0; it < max_sweeps; ++it) {
        q = cavi_update_gmm(q, prior, data.x, 1);
        const double e = elbo_gmm(q, prior, data.x, 1);
        if (std::abs(e - last) < tol) break;
        last = e;
    }
    return q;
}

// Direct median ---------------------------------------------------------------

/// Direct-median solver: minimizes the median over blocks of
/// log-evidence_j - ELBO_j(F) (the per-block KL to the powered local
/// posterior) by a median-block selection heuristic with one CAVI sweep per
/// iteration. Single-sided; needs a tractable per-block evidence, so it is
/// only provided for the linear-regression model.
inline AggregateResult<BlrVariational> mvb_direct_median(const Dataset& data, const Partition& part,
                                                         const BlrPrior& prior,
                                                         const AggregatorConfig& cfg,
                                                         std::optional<BlrVariational> init = std::nullopt) {
    cfg.validate();
    if (data.kind != ModelKind::BLR)
        throw std::invalid_argument("mvb_direct_median: unsupported model (needs tractable evidence)");
    detail::StopWatch watch;
    BlrSolverModel model(data, part, prior);
    const auto power = static_cast<int>(part.m());
    std::vector<double> evidence(part.m());
    for (std::size_t j = 0; j < part.m(); ++j)
        evidence[j] = log_evidence_blr(prior, model.block_stats[j], power);

    AggregateResult<BlrVariational> result;
    result.f = init ? *init : model.init();
    result.g = result.f;

    std::vector<double> kl(part.m());
    std::ptrdiff_t prev = -1;
    double last_median = std::numeric_limits<double>::quiet_NaN();
    int stable = 0;
    std::vector<BlrVariational> iterates;
    iterates.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int t = 1; t <= cfg.iterations; ++t) {
        for (std::size_t j = 0; j < part.m(); ++j)
            kl[j] = evidence[j] - model.elbo(result.f, j, power);
        auto [j_med, med] = median_index(kl);
        const std::size_t j = detail::select_block(kl, med, j_med, cfg.tie_rule, prev);
        result.trace.items.push_back({t, 'F', j, med});
        if (cfg.record_gap_vectors) result.trace.gap_vectors.push_back(kl);
        for (int s = 0; s < cfg.inner_sweeps; ++s) model.sweep(result.f, j, power);
        prev = static_cast<std::ptrdiff_t>(j);
        const double f_delta = iterates.empty()
                                   ? std::numeric_limits<double>::infinity()
                                   : detail::state_max_abs_diff(result.f, iterates.back());
        iterates.push_back(result.f);
        if (t > 1 && std::abs(med - last_median) < cfg.convergence_tol &&
            f_delta < cfg.convergence_tol)
            ++stable;
        else
            stable = 0;
        last_median = med;
        if (stable >= 10) break;
    }
    result.f = detail::finalize_side(iterates, cfg.tail_average);
    result.g = result.f;
    result.wall_seconds = watch.seconds();
    return result;
}

// Wasserstein barycenter --------------------------------------------------------

/// Closed-form barycenter of diagonal Gaussians: coordinate-wise mean of
/// means and mean of standard deviations. An approximation of subset
/// aggregation by Wasserstein barycenter, exact within this family.
inline DiagGaussian wasp_barycenter(const std::vector<DiagGaussian>& states) {
    if (states.empty()) throw std::invalid_argument("wasp_barycenter: empty input");
    const std::size_t p = states.front().dim();
    DiagGaussian out;
    out.mean.assign(p, 0.0);
    out.var.assign(p, 0.0);
    for (const auto& s : states) {
        if (s.dim() != p) throw std::invalid_argument("wasp_barycenter: dimension mismatch");
        for (std::size_t l = 0; l < p; ++l) {
            out.mean[l] += s.mean[l];
            out.var[l] += std::sqrt(s.var[l]);  // accumulate sd
        }
    }
    const auto mcount = static_cast<double>(states.size());
    for (std::size_t l = 0; l < p; ++l) {
        out.mean[l] /= mcount;
        const double sd = out.var[l] / mcount;
        out.var[l] = sd * sd;
    }
    return out;
}

/// Gaussian beta factors by the closed-form barycenter; the inverse-gamma
/// factors are aggregated by averaging their (mean, variance) moments and
/// refitting the shape/scale pair.
inline BlrVariational wasp_barycenter(const std::vector<BlrVariational>& states) {
    if (states.empty()) throw std::invalid_argument("wasp_barycenter: empty input");
    const std::size_t p = states.front().p();
    std::vector<DiagGaussian> gauss;
    gauss.reserve(states.size());
    double mean_ig = 0.0, var_ig = 0.0;
    for (const auto& s : states) {
        if (s.p() != p) throw std::invalid_argument("wasp_barycenter: dimension mismatch");
        gauss.emplace_back(s.mu, s.s2);
        if (s.c <= 4.0)
            throw std::invalid_argument("wasp_barycenter: inverse-gamma factor needs c > 4");
        const double mu = s.sigma2_mean();
        mean_ig += mu;
        var_ig += 2.0 * mu * mu / (s.c - 4.0);
    }
    const auto mcount = static_cast<double>(states.size());
    mean_ig /= mcount;
    var_ig /= mcount;
    const DiagGaussian bary = wasp_barycenter(gauss);
    BlrVariational out;
    out.mu = bary.mean;
    out.s2 = bary.var;
    const double shape = mean_ig * mean_ig / var_ig + 2.0;  // IG(shape, scale) units
    out.c = 2.0 * shape;
    out.d = 2.0 * mean_ig * (shape - 1.0);
    return out;
}

/// Component-mean Gaussians averaged after aligning labels to the first
/// state by the mean-permutation of least squared error.
inline GmmVariational wasp_barycenter(const std::vector<GmmVariational>& states) {
    if (states.empty()) throw std::invalid_argument("wasp_barycenter: empty input");
    const std::size_t k = states.front().k();
    if (k > 8) throw std::invalid_argument("wasp_barycenter: label alignment limited to K <= 8");
    std::vector<DiagGaussian> gauss;
    gauss.reserve(states.size());
    const auto& ref = states.front();
    for (const auto& s : states) {
        if (s.k() != k) throw std::invalid_argument("wasp_barycenter: dimension mismatch");
        std::vector<std::size_t> perm(k), best(k);
        for (std::size_t i = 0; i < k; ++i) perm[i] = i;
        double best_cost = std::numeric_limits<double>::infinity();
        do {
            double cost = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                const double d = s.mean[perm[i]] - ref.mean[i];
                cost += d * d;
            }
            if (cost < best_cost) {
                best_cost = cost;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        DiagGaussian g;
        g.mean.resize(k);
        g.var.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            g.mean[i] = s.mean[best[i]];
            g.var[i] = s.s2[best[i]];
        }
        gauss.push_back(std::move(g));
    }
    const DiagGaussian bary = wasp_barycenter(gauss);
    GmmVariational out;
    out.mean = bary.mean;
    out.s2 = bary.var;
    return out;
}

/// Per-subset power-1 CAVI fits, for feeding the barycenter.
inline std::vector<BlrVariational> local_vb_blr(const Dataset& data, const Partition& part,
                                                const BlrPrior& prior, int max_sweeps = 500,
                                                double tol = 1e-12) {
    std::vector<BlrVariational> out;
    out.reserve(part.m());
    for (const auto& rows : part.subsets) {
        const BlrBlockStats st = BlrBlockStats::from_rows(data, rows);
        BlrVariational q = blr_init(data.n_cols, prior);
        double last = elbo_blr(q, prior, st, 1);
        for (int it = 0; it < max_sweeps; ++it) {
            q = cavi_update_blr(q, prior, st, 1);
            const double e = elbo_blr(q, prior, st, 1);
            if (std::abs(e - last) < tol) break;
            last = e;
        }
        out.push_back(std::move(q));
    }
    return out;
}

inline std::vector<GmmVariational> local_vb_gmm(const Dataset& data, const Partition& part,
                                                const GmmPrior& prior, std::size_t k,
                                                std::uint64_t seed, int max_sweeps = 500,
                                                double tol = 1e-12) {
    std::vector<GmmVariational> out;
    out.reserve(part.m());
    RngStream rng(seed, 0x1217);
    const GmmVariational common_init = gmm_init(data.x, k, rng);
    for (const auto& rows : part.subsets) {
        std::vector<double> pts;
        pts.reserve(rows.size());
        for (std::size_t i : rows) pts.push_back(data.x[i]);
        GmmVariational q = common_init;
        double last = elbo_gmm(q, prior, pts, 1);
        for (int it = 0; it < max_sweeps; ++it) {
            q = cavi_update_gmm(q, prior, pts, 1);
            const double e = elbo_gmm(q, prior, pts, 1);
            if (std::abs(e - last) < tol) break;
            last = e;
        }
        out.push_back(std::move(q));
    }
    return out;
}

// Point estimator ---------------------------------------------------------------

struct PointEstimatorResult {
    std::vector<double> theta;
    SolverTrace trace;
    double wall_seconds = 0.0;
};

/// Alternating-gradient min-max median point estimator. Loss requirements:
///   size_t blocks(); size_t dim();
///   double loglik(const vector<double>& theta, size_t j) const;
///   vector<double> grad(const vector<double>& theta, size_t j) const;
/// Each iteration selects the block attaining the median loss difference,
/// ascends the adversary side on it, then re-selects and ascends the primal
/// side; step schedule 1/(L sqrt(t)) with L taken from the initial gradients.
template <class Loss>
PointEstimatorResult minmax_point_solve(const Loss& loss, std::vector<double> theta_f,
                                        std::vector<double> theta_g, const AggregatorConfig& cfg) {
    cfg.validate();
    const std::size_t m = loss.blocks();
    if (m == 0) throw std::invalid_argument("minmax_point_solve: no blocks");
    if (theta_f.size() != loss.dim() || theta_g.size() != loss.dim())
        throw std::invalid_argument("minmax_point_solve: bad initial dimension");
    detail::StopWatch watch;

    // Curvature estimate from the two starting points' gradients (secant);
    // a raw gradient-norm scale would overshoot whenever the log-likelihood
    // gradient grows with the block size. Falls back to the largest initial
    // gradient norm when the starts coincide.
    double lips = 0.0;
    double start_dist = 0.0;
    for (std::size_t l = 0; l < theta_f.size(); ++l) {
        const double d = theta_f[l] - theta_g[l];
        start_dist += d * d;
    }
    start_dist = std::sqrt(start_dist);
    for (std::size_t j = 0; j < m; ++j) {
        const auto gf = loss.grad(theta_f, j);
        if (start_dist > 0.0) {
            const auto gg = loss.grad(theta_g, j);
            double diff = 0.0;
            for (std::size_t l = 0; l < gf.size(); ++l) diff += (gf[l] - gg[l]) * (gf[l] - gg[l]);
            lips = std::max(lips, std::sqrt(diff) / start_dist);
        } else {
            double norm = 0.0;
            for (double v : gf) norm += v * v;
            lips = std::max(lips, std::sqrt(norm));
        }
    }
    if (!(lips > 0.0)) lips = 1.0;

    PointEstimatorResult result;
    std::vector<double> gaps(m);
    for (int t = 1; t <= cfg.iterations; ++t) {
        const double step = 1.0 / (lips * std::sqrt(static_cast<double>(t)));
        for (std::size_t j = 0; j < m; ++j)
            gaps[j] = loss.loglik(theta_g, j) - loss.loglik(theta_f, j);
        auto [jt, med] = median_index(gaps);
        result.trace.items.push_back({t, 'G', jt, med});
        const auto gg = loss.grad(theta_g, jt);
        for (std::size_t l = 0; l < theta_g.size(); ++l) theta_g[l] += step * gg[l];

        for (std::size_t j = 0; j < m; ++j)
            gaps[j] = loss.loglik(theta_g, j) - loss.loglik(theta_f, j);
        auto [jt2, med2] = median_index(gaps);
        result.trace.items.push_back({t, 'F', jt2, med2});
        const auto gf = loss.grad(theta_f, jt2);
        for (std::size_t l = 0; l < theta_f.size(); ++l) theta_f[l] += step * gf[l];

        double norm = 0.0;
        for (double v : theta_f) norm += v * v;
        for (double v : theta_g) norm += v * v;
        if (!(norm < 1e12))
            throw std::runtime_error("minmax_point_solve: divergence detected");
    }
    result.theta = std::move(theta_f);
    result.wall_seconds = watch.seconds();
    return result;
}

/// 1-D Gaussian location loss over raw data blocks (unit-information form
/// with a known noise variance).
struct GaussianLocationLoss {
    std::vector<GaussLocBlockStats> block_stats;
    double noise_var = 1.0;

    static GaussianLocationLoss from_blocks(const std::vector<std::vector<double>>& blocks,
                                            double noise_var = 1.0) {
        GaussianLocationLoss loss;
        loss.noise_var = noise_var;
        loss.block_stats.reserve(blocks.size());
        for (const auto& b : blocks) loss.block_stats.push_back(GaussLocBlockStats::from(b));
        return loss;
    }

    std::size_t blocks() const { return block_stats.size(); }
    std::size_t dim() const { return 1; }
    double loglik(const std::vector<double>& theta, std::size_t j) const {
        const auto& st = block_stats[j];
        const double mu = theta[0];
        return -(st.sum_xx - 2.0 * mu * st.sum_x + static_cast<double>(st.n) * mu * mu) /
               (2.0 * noise_var);
    }
    std::vector<double> grad(const std::vector<double>& theta, std::size_t j) const {
        const auto& st = block_stats[j];
        return {(st.sum_x - static_cast<double>(st.n) * theta[0]) / noise_var};
    }
    double block_mle(std::size_t j) const {
        const auto& st = block_stats[j];
        return st.n == 0 ? 0.0 : st.sum_x / static_cast<double>(st.n);
    }
};

/// Point estimator for the Gaussian location model: the primal side starts
/// at the median of the per-block maximizers, the adversary at their mean
/// (distinct starts keep the two sides from mirroring each other).
inline PointEstimatorResult minmax_point_estimator(const GaussianLocationLoss& loss,
                                                   const AggregatorConfig& cfg) {
    const std::size_t m = loss.blocks();
    std::vector<double> mles(m);
    for (std::size_t j = 0; j < m; ++j) mles[j] = loss.block_mle(j);
    const double start_f = median_index(mles).second;
    double start_g = 0.0;
    for (double v : mles) start_g += v;
    start_g /= static_cast<double>(m);
    return minmax_point_solve(loss, {start_f}, {start_g}, cfg);
}

/// Regression coefficient loss with unit noise variance (the variance only
/// rescales the gaps, never the argmin).
struct BlrPointLoss {
    std::vector<BlrBlockStats> block_stats;

    static BlrPointLoss from(const Dataset& data, const Partition& part) {
        BlrPointLoss loss;
        loss.block_stats.reserve(part.m());
        for (const auto& rows : part.subsets)
            loss.block_stats.push_back(BlrBlockStats::from_rows(data, rows));
        return loss;
    }

    std::size_t blocks() const { return block_stats.size(); }
    std::size_t dim() const { return block_stats.empty() ? 0 : block_stats.front().p; }
    double loglik(const std::vector<double>& beta, std::size_t j) const {
        const auto& st = block_stats[j];
        double quad = st.yty;
        for (std::size_t a = 0; a < st.p; ++a) {
            double row = 0.0;
            for (std::size_t b = 0; b < st.p; ++b) row += st.xtx_at(a, b) * beta[b];
            quad += beta[a] * (row - 2.0 * st.xty[a]);
        }
        return -0.5 * quad;
    }
    std::vector<double> grad(const std::vector<double>& beta, std::size_t j) const {
        const auto& st = block_stats[j];
        std::vector<double> g(st.p);
        for (std::size_t a = 0; a < st.p; ++a) {
            double row = 0.0;
            for (std::size_t b = 0; b < st.p; ++b) row += st.xtx_at(a, b) * beta[b];
            g[a] = st.xty[a] - row;
        }
        return g;
    }

    std::vector<double> block_ls(std::size_t j) const {
        const auto& st = block_stats[j];
        std::vector<double> a(st.xtx);
        for (std::size_t l = 0; l < st.p; ++l) a[l * st.p + l] += 1e-9;
        detail::cholesky(a, st.p);
        std::vector<double> z(st.p), beta(st.p);
        for (std::size_t i = 0; i < st.p; ++i) {
            double s = st.xty[i];
            for (std::size_t k = 0; k < i; ++k) s -= a[i * st.p + k] * z[k];
            z[i] = s / a[i * st.p + i];
        }
        for (std::size_t ii = st.p; ii-- > 0;) {
            double s = z[ii];
            for (std::size_t k = ii + 1; k < st.p; ++k) s -= a[k * st.p + ii] * beta[k];
            beta[ii] = s / a[ii * st.p + ii];
        }
        return beta;
    }
    std::vector<double> ols_median_init() const {
        const std::size_t p = dim();
        std::vector<double> init(p);
        std::vector<double> coord(blocks());
        for (std::size_t l = 0; l < p; ++l) {
            for (std::size_t j = 0; j < blocks(); ++j) coord[j] = block_ls(j)[l];
            init[l] = median_index(coord).second;
        }
        return init;
    }
    std::vector<double> ols_mean_init() const {
        const std::size_t p = dim();
        std::vector<double> init(p, 0.0);
        for (std::size_t j = 0; j < blocks(); ++j) {
            const auto b = block_ls(j);
            for (std::size_t l = 0; l < p; ++l) init[l] += b[l];
        }
        for (auto& v : init) v /= static_cast<double>(blocks());
        return init;
    }
};

/// Marginal mixture log-likelihood over the component means (unit component
/// variances, equal weights).
struct GmmPointLoss {
    std::vector<std::vector<double>> block_points;
    std::size_t k = 0;
    std::vector<double> pooled_sorted;

    static GmmPointLoss from(const Dataset& data, const Partition& part, std::size_t k) {
        if (data.kind != ModelKind::GMM)
            throw std::invalid_argument("GmmPointLoss: dataset is not GMM");
        GmmPointLoss loss;
        loss.k = k;
        loss.block_points.reserve(part.m());
        for (const auto& rows : part.subsets) {
            std::vector<double> pts;
            pts.reserve(rows.size());
            for (std::size_t i : rows) pts.push_back(data.x[i]);
            loss.block_points.push_back(std::move(pts));
        }
        loss.pooled_sorted = data.x;
        std::sort(loss.pooled_sorted.begin(), loss.pooled_sorted.end());
        return loss;
    }

    std::size_t blocks() const { return block_points.size(); }
    std::size_t dim() const { return k; }
    double loglik(const std::vector<double>& theta, std::size_t j) const {
        double total = 0.0;
        std::vector<double> logits(k);
        for (double x : block_points[j]) {
            for (std::size_t c = 0; c < k; ++c) {
                const double d = x - theta[c];
                logits[c] = -0.5 * d * d;
            }
            total += log_sum_exp(logits);  // log K constant dropped
        }
        return total;
    }
    std::vector<double> grad(const std::vector<double>& theta, std::size_t j) const {
        std::vector<double> g(k, 0.0), logits(k);
        for (double x : block_points[j]) {
            for (std::size_t c = 0; c < k; ++c) {
                const double d = x - theta[c];
                logits[c] = -0.5 * d * d;
            }
            const double lse = log_sum_exp(logits);
            for (std::size_t c = 0; c < k; ++c)
                g[c] += std::exp(logits[c] - lse) * (x - theta[c]);
        }
        return g;
    }
    std::vector<double> quantile_init() const {
        std::vector<double> init(k, 0.0);
        if (pooled_sorted.empty()) return init;
        for (std::size_t c = 0; c < k; ++c) {
            const double pos = (static_cast<double>(c) + 0.5) / static_cast<double>(k) *
                               static_cast<double>(pooled_sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, pooled_sorted.size() - 1);
            const double frac = pos - static_cast<double>(lo);
            init[c] = pooled_sorted[lo] * (1.0 - frac) + pooled_sorted[hi] * frac;
        }
        return init;
    }
};

}  // namespace m3vb

#endif  // M3VB_AGGREGATOR_HPP
