#ifndef M3VB_GMM_HPP
#define M3VB_GMM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "m3vb/core.hpp"
#include "m3vb/data.hpp"

// Univariate K-component Gaussian mixture with unit component variances and
// equal mixing weights 1/K:
//   theta_l ~ N(0, sigma0_sq),  S_i ~ Cat(1/K,...),  x_i | S_i ~ N(theta_{S_i}, 1).
// Variational family: prod_l N(theta_l; m_l, s2_l) x prod_i Cat(S_i; phi_i).
// The cluster-assignment factors are local latent variables: they are always
// recomputed from scratch at their closed-form optimum, so evaluating the
// ELBO maximizes them out exactly. The likelihood power w multiplies both
// p(x|S,theta) and p(S) terms; the optimal categorical factor therefore
// carries w inside its softmax.

namespace m3vb {

struct GmmPrior {
    double sigma0_sq = 100.0;

    void validate() const {
        if (!(sigma0_sq > 0.0))
            throw std::invalid_argument("GmmPrior: sigma0_sq must be positive");
    }
};

/// Gaussian factors over the K component means.
struct GmmVariational {
    std::vector<double> mean;
    std::vector<double> s2;

    std::size_t k() const { return mean.size(); }

    void validate() const {
        if (mean.empty() || mean.size() != s2.size())
            throw std::invalid_argument("GmmVariational: mean/s2 size mismatch or empty");
        for (double v : s2)
            if (!(v > 0.0) || !std::isfinite(v))
                throw std::invalid_argument("GmmVariational: s2 must be positive and finite");
    }
};

/// Row-stochastic assignment probabilities, one row per observation.
struct Responsibilities {
    std::size_t rows = 0;
    std::size_t k = 0;
    std::vector<double> phi;  // row-major rows x k

    double at(std::size_t i, std::size_t comp) const { return phi[i * k + comp]; }
};

/// Closed-form optimal categorical factors for the given power:
/// phi_ik proportional to exp(w * (m_k x_i - (s2_k + m_k^2)/2)), each row
/// normalized. Equal prior weights cancel in the normalization.
inline Responsibilities responsibilities(const GmmVariational& q, std::span<const double> x,
                                         int power = 1) {
    q.validate();
    if (power < 1) throw std::invalid_argument("responsibilities: power must be >= 1");
    const double w = static_cast<double>(power);
    const std::size_t k = q.k();
    Responsibilities r;
    r.rows = x.size();
    r.k = k;
    r.phi.resize(r.rows * k);
    std::vector<double> logits(k);
    for (std::size_t i = 0; i < r.rows; ++i) {
        for (std::size_t c = 0; c < k; ++c)
            logits[c] = w * (q.mean[c] * x[i] - 0.5 * (q.s2[c] + q.mean[c] * q.mean[c]));
        const double lse = log_sum_exp(logits);
        for (std::size_t c = 0; c < k; ++c) r.phi[i * k + c] = std::exp(logits[c] - lse);
    }
    return r;
}

/// ELBO with the assignment factors maximized out at the given power. The
/// theta prior is never powered. Deterministic; empty input returns the
/// negative KL of q to its prior.
inline double elbo_gmm(const GmmVariational& q, const GmmPrior& prior,
                       std::span<const double> x, int power) {
    q.validate();
    prior.validate();
    if (power < 1) throw std::invalid_argument("elbo_gmm: power must be >= 1");
    const double w = static_cast<double>(power);
    const std::size_t k = q.k();
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const double log_k = std::log(static_cast<double>(k));

    double value = 0.0;
    const Responsibilities phi = responsibilities(q, x, power);
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            const double p = phi.at(i, c);
            if (p <= 0.0) continue;
            const double e_loglik = -0.5 * kLog2Pi -
                                    0.5 * (x[i] * x[i] - 2.0 * x[i] * q.mean[c] +
                                           q.mean[c] * q.mean[c] + q.s2[c]);
            value += p * (w * (e_loglik - log_k) - std::log(p));
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        value -= 0.5 * std::log(prior.sigma0_sq / q.s2[c]) +
                 (q.s2[c] + q.mean[c] * q.mean[c]) / (2.0 * prior.sigma0_sq) - 0.5;
    }
    return value;
}

/// One full sweep: refresh the assignment factors at the given power, then
/// set every (m_k, s2_k) to its exact coordinate optimizer. Never decreases
/// the ELBO at that power.
inline GmmVariational cavi_update_gmm(const GmmVariational& q_in, const GmmPrior& prior,
                                      std::span<const double> x, int power) {
    q_in.validate();
    prior.validate();
    if (power < 1) throw std::invalid_argument("cavi_update_gmm: power must be >= 1");
    const double w = static_cast<double>(power);
    GmmVariational q = q_in;
    const std::size_t k = q.k();
    const Responsibilities phi = responsibilities(q_in, x, power);
    for (std::size_t c = 0; c < k; ++c) {
        double mass = 0.0, moment = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mass += phi.at(i, c);
            moment += phi.at(i, c) * x[i];
        }
        const double prec = 1.0 / prior.sigma0_sq + w * mass;
        if (!(prec > 0.0) || !std::isfinite(prec))
            throw std::runtime_error("cavi_update_gmm: nonpositive precision");
        q.s2[c] = 1.0 / prec;
        q.mean[c] = q.s2[c] * w * moment;
    }
    return q;
}

/// Documented initial state: component means at the K empirical quantile
/// spreads of the data plus a small seeded jitter to break label symmetry;
/// unit variances.
inline GmmVariational gmm_init(std::span<const double> x, std::size_t k, RngStream& rng) {
    if (k == 0) throw std::invalid_argument("gmm_init: K must be >= 1");
    GmmVariational q;
    q.mean.resize(k);
    q.s2.assign(k, 1.0);
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t c = 0; c < k; ++c) {
        double base = 0.0;
        if (!sorted.empty()) {
            const double pos = (static_cast<double>(c) + 0.5) / static_cast<double>(k) *
                               static_cast<double>(sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
            const double frac = pos - static_cast<double>(lo);
            base = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
        }
        q.mean[c] = base + 0.05 * rng.normal();
    }
    return q;
}

}  // namespace m3vb

#endif  // M3VB_GMM_HPP
