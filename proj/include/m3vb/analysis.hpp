#ifndef M3VB_ANALYSIS_HPP
#define M3VB_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "m3vb/blr.hpp"
#include "m3vb/core.hpp"
#include "m3vb/data.hpp"
#include "m3vb/gmm.hpp"

// Diagnostics and reference computations: information-scaled reference
// Gaussians and KL against them, permutation-matched parameter errors,
// Fisher-information estimation, an exact enumeration showing how powering a
// marginal with local latent structure moves its population maximizer, and a
// brute-force min-max median oracle over quadratic objectives.

namespace m3vb {

/// N(mean, (1/(m n)) diag(precision)^{-1}): the information-scaled reference
/// a well-behaved aggregated posterior should approach.
struct ReferenceGaussian {
    std::vector<double> mean;
    std::vector<double> precision_diag;  // per-observation information units
    std::size_t m = 1;
    std::size_t n = 1;

    void validate() const {
        if (mean.empty() || mean.size() != precision_diag.size())
            throw std::invalid_argument("ReferenceGaussian: mean/precision size mismatch");
        for (double v : precision_diag)
            if (!(v > 0.0)) throw std::invalid_argument("ReferenceGaussian: precision must be positive");
        if (m == 0 || n == 0)
            throw std::invalid_argument("ReferenceGaussian: m, n must be >= 1");
    }

    DiagGaussian to_gaussian() const {
        validate();
        DiagGaussian g;
        g.mean = mean;
        g.var.resize(precision_diag.size());
        const double scale = static_cast<double>(m) * static_cast<double>(n);
        for (std::size_t l = 0; l < precision_diag.size(); ++l)
            g.var[l] = 1.0 / (scale * precision_diag[l]);
        return g;
    }
};

/// KL of the state's Gaussian parameter block against the reference. The
/// inverse-gamma noise factor of the regression state is excluded by
/// definition (the reference is stated over the location parameters only).
inline double kl_to_reference(const DiagGaussian& state_block, const ReferenceGaussian& ref) {
    return kl_diag_gaussians(state_block, ref.to_gaussian());
}

inline double kl_to_reference(const BlrVariational& state, const ReferenceGaussian& ref) {
    return kl_to_reference(DiagGaussian(state.mu, state.s2), ref);
}

inline double kl_to_reference(const GmmVariational& state, const ReferenceGaussian& ref) {
    return kl_to_reference(DiagGaussian(state.mean, state.s2), ref);
}

/// Euclidean error, optionally minimized over all label permutations
/// (exhaustive, K <= 5).
inline double l2_error(const std::vector<double>& estimated, const std::vector<double>& truth,
                       bool match_components = false) {
    if (estimated.size() != truth.size())
        throw std::invalid_argument("l2_error: length mismatch");
    if (!match_components) {
        double s = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double d = estimated[i] - truth[i];
            s += d * d;
        }
        return std::sqrt(s);
    }
    if (truth.size() > 5)
        throw std::invalid_argument("l2_error: component matching limited to K <= 5");
    std::vector<std::size_t> perm(truth.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double d = estimated[perm[i]] - truth[i];
            s += d * d;
        }
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best);
}

// Fisher information -----------------------------------------------------------

struct FisherEstimate {
    std::vector<double> diag;
    std::vector<double> standard_error;
};

/// Monte-Carlo average of the per-observation negative log-likelihood
/// Hessian diagonal over the regression coefficients: x_l^2 / sigma^2.
inline FisherEstimate fisher_diag_blr(const Dataset& data, double sigma2_hat,
                                      std::size_t min_sample = 10000) {
    data.validate();
    if (data.kind != ModelKind::BLR) throw std::invalid_argument("fisher_diag_blr: dataset is not BLR");
    if (data.n_rows < min_sample)
        throw std::invalid_argument("fisher_diag_blr: sample too small for a stable estimate");
    if (!(sigma2_hat > 0.0)) throw std::invalid_argument("fisher_diag_blr: sigma2 must be positive");
    const std::size_t p = data.n_cols;
    FisherEstimate est;
    est.diag.assign(p, 0.0);
    est.standard_error.assign(p, 0.0);
    std::vector<double> sumsq(p, 0.0);
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        for (std::size_t l = 0; l < p; ++l) {
            const double h = data.xat(i, l) * data.xat(i, l) / sigma2_hat;
            est.diag[l] += h;
            sumsq[l] += h * h;
        }
    }
    const auto n = static_cast<double>(data.n_rows);
    for (std::size_t l = 0; l < p; ++l) {
        est.diag[l] /= n;
        const double var = std::max(0.0, sumsq[l] / n - est.diag[l] * est.diag[l]);
        est.standard_error[l] = std::sqrt(var / n);
        if (!(est.diag[l] > 0.0))
            throw std::runtime_error("fisher_diag_blr: degenerate information matrix");
    }
    return est;
}

/// Complete-information diagonal for the mixture: the conditional expectation
/// of the complete-data Hessian for theta_k is the assignment probability of
/// component k, averaged over a large clean sample at the supplied estimate.
inline FisherEstimate fisher_diag_gmm(const Dataset& data, const std::vector<double>& theta_hat,
                                      std::size_t min_sample = 10000) {
    data.validate();
    if (data.kind != ModelKind::GMM) throw std::invalid_argument("fisher_diag_gmm: dataset is not GMM");
    if (data.n_rows < min_sample)
        throw std::invalid_argument("fisher_diag_gmm: sample too small for a stable estimate");
    const std::size_t k = theta_hat.size();
    GmmVariational point;
    point.mean = theta_hat;
    point.s2.assign(k, 1e-12);  // point-mass limit of the assignment rule
    const Responsibilities phi = responsibilities(point, data.x, 1);
    FisherEstimate est;
    est.diag.assign(k, 0.0);
    est.standard_error.assign(k, 0.0);
    std::vector<double> sumsq(k, 0.0);
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            const double h = phi.at(i, c);
            est.diag[c] += h;
            sumsq[c] += h * h;
        }
    }
    const auto n = static_cast<double>(data.n_rows);
    for (std::size_t c = 0; c < k; ++c) {
        est.diag[c] /= n;
        const double var = std::max(0.0, sumsq[c] / n - est.diag[c] * est.diag[c]);
        est.standard_error[c] = std::sqrt(var / n);
        if (!(est.diag[c] > 0.0))
            throw std::runtime_error("fisher_diag_gmm: degenerate information matrix");
    }
    return est;
}

// Discrete powered-marginal check -----------------------------------------------

/// Exact small rational.
struct Rational {
    long long num = 0;
    long long den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    double log_value() const {
        if (num <= 0) throw std::domain_error("Rational: log of nonpositive value");
        return std::log(static_cast<double>(num)) - std::log(static_cast<double>(den));
    }
    Rational operator*(const Rational& o) const { return {num * o.num, den * o.den}; }
    Rational complement() const { return {den - num, den}; }  // 1 - r
};

/// Binary latent model over theta, S, X in {0,1}: conditional tables
/// P(S=0|theta) and P(X=0|S,theta), all exact rationals.
struct DiscreteLatentModel {
    Rational p_s0_given_theta[2];
    Rational p_x0_given_s_theta[2][2];  // [s][theta]

    void validate() const {
        auto check = [](const Rational& r) {
            if (r.den <= 0 || r.num < 0 || r.num > r.den)
                throw std::invalid_argument("DiscreteLatentModel: probability out of [0,1]");
        };
        for (int t = 0; t < 2; ++t) check(p_s0_given_theta[t]);
        for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t) check(p_x0_given_s_theta[s][t]);
    }

    /// Joint p(x, s | theta), exact.
    Rational joint(int x, int s, int theta) const {
        const Rational ps = s == 0 ? p_s0_given_theta[theta] : p_s0_given_theta[theta].complement();
        const Rational px = x == 0 ? p_x0_given_s_theta[s][theta]
                                   : p_x0_given_s_theta[s][theta].complement();
        return ps * px;
    }

    /// Marginal p(x | theta), exact.
    Rational marginal(int x, int theta) const {
        const Rational a = joint(x, 0, theta);
        const Rational b = joint(x, 1, theta);
        return {a.num * b.den + b.num * a.den, a.den * b.den};
    }
};

struct DiscreteInconsistencyReport {
    double marginal_objective[2] = {0, 0};   // E_{theta*}[log p(X|theta)]
    int marginal_argmax = 0;
    struct PerPower {
        std::size_t m = 1;
        double objective[2] = {0, 0};        // E_{theta*}[log pm(X|theta)], pm normalized
        int argmax = 0;
    };
    std::vector<PerPower> per_power;
    double limit_objective[2] = {0, 0};      // lim (1/m) E[log pm(X|theta)]
    int limit_argmax = 0;
    std::optional<std::size_t> first_flip_m; // smallest scanned m whose argmax leaves theta*
};

/// Exact enumeration over (x, s) of the population objectives under
/// theta* = 0: the plain marginal log-likelihood, the normalized m-powered
/// joint marginal log sum_s p^m(x,s|theta) / sum_{x',s} p^m(x',s|theta) for
/// each requested m, and the m -> infinity limit of (1/m) of that objective
/// (driven by the per-cell dominant term max_s p(x,s|theta)).
inline DiscreteInconsistencyReport discrete_inconsistency_check(
    const DiscreteLatentModel& model, const std::vector<std::size_t>& m_values) {
    model.validate();
    DiscreteInconsistencyReport rep;

    // weights under the generating parameter theta* = 0
    double pstar[2];
    for (int x = 0; x < 2; ++x) pstar[x] = model.marginal(x, 0).value();

    for (int theta = 0; theta < 2; ++theta) {
        double obj = 0.0;
        for (int x = 0; x < 2; ++x) obj += pstar[x] * model.marginal(x, theta).log_value();
        rep.marginal_objective[theta] = obj;
    }
    rep.marginal_argmax = rep.marginal_objective[1] > rep.marginal_objective[0] ? 1 : 0;

    auto powered_objective = [&](std::size_t m, int theta) {
        // log-domain evaluation of the exact rational power sums
        std::vector<double> cell_logs;  // log sum_s p^m(x,s|theta) per x
        std::vector<double> all_logs;
        cell_logs.reserve(2);
        for (int x = 0; x < 2; ++x) {
            std::vector<double> terms;
            for (int s = 0; s < 2; ++s) {
                const Rational j = model.joint(x, s, theta);
                if (j.num == 0) continue;
                terms.push_back(static_cast<double>(m) * j.log_value());
            }
            const double lse = log_sum_exp(terms);
            cell_logs.push_back(lse);
            all_logs.push_back(lse);
        }
        const double log_z = log_sum_exp(all_logs);
        double obj = 0.0;
        for (int x = 0; x < 2; ++x) obj += pstar[x] * (cell_logs[static_cast<std::size_t>(x)] - log_z);
        return obj;
    };

    for (std::size_t m : m_values) {
        if (m == 0) throw std::invalid_argument("discrete_inconsistency_check: m must be >= 1");
        DiscreteInconsistencyReport::PerPower row;
        row.m = m;
        for (int theta = 0; theta < 2; ++theta) row.objective[theta] = powered_objective(m, theta);
        row.argmax = row.objective[1] > row.objective[0] ? 1 : 0;
        if (!rep.first_flip_m && row.argmax != rep.marginal_argmax) rep.first_flip_m = m;
        rep.per_power.push_back(row);
    }

    for (int theta = 0; theta < 2; ++theta) {
        double obj = 0.0;
        double log_max_all = -std::numeric_limits<double>::infinity();
        double cell_max[2];
        for (int x = 0; x < 2; ++x) {
            double best = -std::numeric_limits<double>::infinity();
            for (int s = 0; s < 2; ++s) {
                const Rational j = model.joint(x, s, theta);
                if (j.num == 0) continue;
                best = std::max(best, j.log_value());
            }
            cell_max[x] = best;
            log_max_all = std::max(log_max_all, best);
        }
        for (int x = 0; x < 2; ++x) obj += pstar[x] * (cell_max[x] - log_max_all);
        rep.limit_objective[theta] = obj;
    }
    rep.limit_argmax = rep.limit_objective[1] > rep.limit_objective[0] ? 1 : 0;
    return rep;
}

// Brute-force min-max median oracle ----------------------------------------------

struct BruteForceGrid {
    double step = 1e-3;
    double pad = 1.0;          // grid margin beyond the hull of the centers
    double tolerance = 1e-2;   // requested localization accuracy

    void validate() const {
        if (!(step > 0.0)) throw std::invalid_argument("BruteForceGrid: step must be positive");
        if (step > tolerance)
            throw std::invalid_argument("BruteForceGrid: grid too coarse for requested tolerance");
    }
};

struct BruteForceResult {
    double theta_f = 0.0;
    double objective = 0.0;
};

namespace detail {

/// Exact inner maximum over theta_g of med_j { c_j - omega (theta_g - t_j)^2 }.
/// The median of downward parabolas is piecewise parabolic; its maximum is
/// attained at a parabola peak or a pairwise crossing, so scanning those
/// candidates (plus theta_f itself) is exact.
inline double inner_max_quadratic_median(const std::vector<double>& centers,
                                         const std::vector<double>& c, double omega,
                                         double theta_f, std::vector<double>& scratch) {
    const std::size_t m = centers.size();
    auto median_at = [&](double g) {
        for (std::size_t j = 0; j < m; ++j) {
            const double d = g - centers[j];
            scratch[j] = c[j] - omega * d * d;
        }
        return median_index(scratch).second;
    };
    double best = median_at(theta_f);
    for (std::size_t j = 0; j < m; ++j) best = std::max(best, median_at(centers[j]));
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            const double dt = centers[b] - centers[a];
            if (dt == 0.0) continue;
            const double cross =
                0.5 * ((c[a] - c[b]) / (omega * dt) + centers[a] + centers[b]);
            best = std::max(best, median_at(cross));
        }
    }
    return best;
}

}  // namespace detail

/// Exhaustive minimization over a theta_f grid of the exact inner maximum of
/// med_j { omega (theta_f - t_j)^2 - omega (theta_g - t_j)^2 }. 1-D only.
inline BruteForceResult brute_force_minmax_median(const std::vector<double>& theta_hats,
                                                  double omega, const BruteForceGrid& grid) {
    if (theta_hats.empty())
        throw std::invalid_argument("brute_force_minmax_median: empty centers");
    if (!(omega > 0.0))
        throw std::invalid_argument("brute_force_minmax_median: omega must be positive");
    grid.validate();
    const auto [lo_it, hi_it] = std::minmax_element(theta_hats.begin(), theta_hats.end());
    const double lo = *lo_it - grid.pad;
    const double hi = *hi_it + grid.pad;
    const auto steps = static_cast<std::size_t>(std::ceil((hi - lo) / grid.step));

    const std::size_t m = theta_hats.size();
    std::vector<double> c(m), scratch(m);
    BruteForceResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= steps; ++i) {
        const double f = lo + static_cast<double>(i) * grid.step;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = f - theta_hats[j];
            c[j] = omega * d * d;
        }
        const double obj = detail::inner_max_quadratic_median(theta_hats, c, omega, f, scratch);
        if (obj < best.objective) {
            best.objective = obj;
            best.theta_f = f;
        }
    }
    return best;
}

}  // namespace m3vb

#endif  // M3VB_ANALYSIS_HPP
