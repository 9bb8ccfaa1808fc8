#ifndef M3VB_BLR_HPP
#define M3VB_BLR_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "m3vb/core.hpp"
#include "m3vb/data.hpp"

// Bayesian linear regression y = x'beta + N(0, sigma^2) under the conjugate
// normal-inverse-gamma prior
//   beta | sigma^2 ~ N(0, alpha sigma^2 I_p),  sigma^2 ~ IG(a0/2, b0/2),
// with the factorized variational family
//   prod_l N(beta_l; mu_l, s2_l) x IG(sigma^2; c/2, d/2).
// Every operation accepts a likelihood power w >= 1; the power multiplies the
// data terms only, never the prior. All sigma^2-free additive constants are
// retained so values are comparable across subsets.

namespace m3vb {

struct BlrPrior {
    double alpha = 100.0;  // prior scale of beta relative to sigma^2
    double a0 = 2.0;
    double b0 = 2.0;

    void validate() const {
        if (!(alpha > 0.0) || !(a0 > 0.0) || !(b0 > 0.0))
            throw std::invalid_argument("BlrPrior: alpha, a0, b0 must be positive");
    }
};

/// Variational state: p Gaussian factors for beta plus one inverse-gamma
/// factor IG(c/2, d/2) for the noise variance.
struct BlrVariational {
    std::vector<double> mu;
    std::vector<double> s2;
    double c = 4.0;
    double d = 2.0;

    std::size_t p() const { return mu.size(); }

    double e_inv_sigma2() const { return c / d; }                       // E[1/sigma^2]
    double e_log_sigma2() const { return std::log(d / 2.0) - digamma(c / 2.0); }
    double sigma2_mean() const {
        if (c <= 2.0) throw std::runtime_error("BlrVariational: E[sigma^2] needs c > 2");
        return d / (c - 2.0);
    }

    void validate() const {
        if (mu.empty() || mu.size() != s2.size())
            throw std::invalid_argument("BlrVariational: mu/s2 size mismatch or empty");
        for (double v : s2)
            if (!(v > 0.0) || !std::isfinite(v))
                throw std::invalid_argument("BlrVariational: s2 must be positive and finite");
        if (!(c > 0.0) || !(d > 0.0))
            throw std::invalid_argument("BlrVariational: c, d must be positive");
    }
};

/// Sufficient statistics of a data subset: everything the ELBO, the CAVI
/// sweep and the evidence need, independent of the subset size afterwards.
struct BlrBlockStats {
    std::size_t n = 0;
    std::size_t p = 0;
    std::vector<double> xtx;  // p x p, row-major
    std::vector<double> xty;  // p
    double yty = 0.0;

    double xtx_at(std::size_t a, std::size_t b) const { return xtx[a * p + b]; }

    static BlrBlockStats from_rows(const Dataset& data, std::span<const std::size_t> rows) {
        if (data.kind != ModelKind::BLR)
            throw std::invalid_argument("BlrBlockStats: dataset is not BLR");
        BlrBlockStats s;
        s.p = data.n_cols;
        s.n = rows.size();
        s.xtx.assign(s.p * s.p, 0.0);
        s.xty.assign(s.p, 0.0);
        for (std::size_t i : rows) {
            const double* xi = &data.x[i * s.p];
            const double yi = data.y[i];
            for (std::size_t a = 0; a < s.p; ++a) {
                for (std::size_t b = a; b < s.p; ++b) s.xtx[a * s.p + b] += xi[a] * xi[b];
                s.xty[a] += xi[a] * yi;
            }
            s.yty += yi * yi;
        }
        for (std::size_t a = 0; a < s.p; ++a)
            for (std::size_t b = 0; b < a; ++b) s.xtx[a * s.p + b] = s.xtx[b * s.p + a];
        return s;
    }

    static BlrBlockStats from_all(const Dataset& data) {
        std::vector<std::size_t> rows(data.n_rows);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        return from_rows(data, rows);
    }
};

/// Documented initial state: flat means, prior-scale variances, weakly
/// informative noise factor.
inline BlrVariational blr_init(std::size_t p, const BlrPrior& prior) {
    prior.validate();
    BlrVariational q;
    q.mu.assign(p, 0.0);
    q.s2.assign(p, prior.alpha);
    q.c = prior.a0 + 2.0;
    q.d = prior.b0;
    return q;
}

namespace detail {

/// E_q[(y - x'beta)^2] summed over the block.
inline double expected_sse(const BlrVariational& q, const BlrBlockStats& st) {
    double quad = 0.0;
    for (std::size_t a = 0; a < st.p; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < st.p; ++b) row += st.xtx_at(a, b) * q.mu[b];
        quad += q.mu[a] * (row - 2.0 * st.xty[a]);
        quad += st.xtx_at(a, a) * q.s2[a];
    }
    return st.yty + quad;
}

inline double expected_beta_sq(const BlrVariational& q) {
    double s = 0.0;
    for (std::size_t l = 0; l < q.p(); ++l) s += q.mu[l] * q.mu[l] + q.s2[l];
    return s;
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace detail

/// Evidence lower bound of the power-weighted joint against q, in closed
/// form through the Gaussian/inverse-gamma moment identities.
inline double elbo_blr(const BlrVariational& q, const BlrPrior& prior,
                       const BlrBlockStats& st, int power) {
    q.validate();
    prior.validate();
    if (power < 1) throw std::invalid_argument("elbo_blr: power must be >= 1");
    if (st.n > 0 && st.p != q.p())
        throw std::invalid_argument("elbo_blr: state/block dimension mismatch");
    const double w = static_cast<double>(power);
    const auto p = static_cast<double>(q.p());
    const double ei = q.e_inv_sigma2();
    const double el = q.e_log_sigma2();

    const double loglik =
        st.n == 0 ? 0.0
                  : w * (-0.5 * static_cast<double>(st.n) * (detail::kLog2Pi + el) -
                         0.5 * ei * detail::expected_sse(q, st));

    const double prior_beta = -0.5 * p * (detail::kLog2Pi + std::log(prior.alpha)) -
                              0.5 * p * el -
                              ei / (2.0 * prior.alpha) * detail::expected_beta_sq(q);

    const double a0h = prior.a0 / 2.0, b0h = prior.b0 / 2.0;
    const double prior_ig = a0h * std::log(b0h) - std::lgamma(a0h) -
                            (a0h + 1.0) * el - b0h * ei;

    double entropy_beta = 0.0;
    for (std::size_t l = 0; l < q.p(); ++l)
        entropy_beta += 0.5 * (detail::kLog2Pi + 1.0 + std::log(q.s2[l]));

    const double ch = q.c / 2.0, dh = q.d / 2.0;
    const double e_log_q_ig = ch * std::log(dh) - std::lgamma(ch) - (ch + 1.0) * el - dh * ei;

    return loglik + prior_beta + prior_ig + entropy_beta - e_log_q_ig;
}

/// One full CAVI sweep: each beta_l factor is set to its exact coordinate
/// optimizer given all other factors (Gauss-Seidel order), then the
/// inverse-gamma factor. The power scales every data sufficient statistic
/// but not the prior terms. The returned state never decreases the ELBO.
inline BlrVariational cavi_update_blr(const BlrVariational& q_in, const BlrPrior& prior,
                                      const BlrBlockStats& st, int power) {
    q_in.validate();
    prior.validate();
    if (power < 1) throw std::invalid_argument("cavi_update_blr: power must be >= 1");
    if (st.n > 0 && st.p != q_in.p())
        throw std::invalid_argument("cavi_update_blr: state/block dimension mismatch");
    const double w = static_cast<double>(power);
    BlrVariational q = q_in;
    const std::size_t p = q.p();

    double ei = q.e_inv_sigma2();
    for (std::size_t l = 0; l < p; ++l) {
        const double gll = st.n == 0 ? 0.0 : st.xtx_at(l, l);
        const double prec = ei * (w * gll + 1.0 / prior.alpha);
        if (!(prec > 0.0) || !std::isfinite(prec))
            throw std::runtime_error("cavi_update_blr: nonpositive coordinate precision");
        double resid = 0.0;
        if (st.n > 0) {
            resid = st.xty[l];
            for (std::size_t k = 0; k < p; ++k)
                if (k != l) resid -= st.xtx_at(l, k) * q.mu[k];
        }
        q.s2[l] = 1.0 / prec;
        q.mu[l] = ei * w * resid / prec;
    }

    const double sse = st.n == 0 ? 0.0 : detail::expected_sse(q, st);
    q.c = w * static_cast<double>(st.n) + static_cast<double>(p) + prior.a0;
    q.d = w * sse + detail::expected_beta_sq(q) / prior.alpha + prior.b0;
    if (!(q.d > 0.0) || !std::isfinite(q.d))
        throw std::runtime_error("cavi_update_blr: nonpositive inverse-gamma scale");
    return q;
}

namespace detail {

/// In-place Cholesky factor (lower) of a small SPD matrix, row-major.
inline void cholesky(std::vector<double>& a, std::size_t p) {
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * p + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
            if (i == j) {
                if (!(s > 0.0))
                    throw std::runtime_error("cholesky: matrix not positive definite");
                a[i * p + i] = std::sqrt(s);
            } else {
                a[i * p + j] = s / a[j * p + j];
            }
        }
        for (std::size_t j = i + 1; j < p; ++j) a[i * p + j] = 0.0;
    }
}

}  // namespace detail

/// Exact log marginal likelihood of the power-weighted model (conjugacy is
/// preserved under powering). Empty subset gives 0.
inline double log_evidence_blr(const BlrPrior& prior, const BlrBlockStats& st, int power) {
    prior.validate();
    if (power < 1) throw std::invalid_argument("log_evidence_blr: power must be >= 1");
    const double w = static_cast<double>(power);
    const std::size_t p = st.p;
    if (st.n == 0) return 0.0;

    // V^{-1} = w X'X + I/alpha; b = w X'y
    std::vector<double> vinv(st.xtx);
    for (auto& v : vinv) v *= w;
    for (std::size_t l = 0; l < p; ++l) vinv[l * p + l] += 1.0 / prior.alpha;
    detail::cholesky(vinv, p);

    double log_det_vinv = 0.0;
    for (std::size_t l = 0; l < p; ++l) log_det_vinv += 2.0 * std::log(vinv[l * p + l]);

    // z = L^{-1} b, so b' V b = |z|^2
    std::vector<double> z(p);
    for (std::size_t i = 0; i < p; ++i) {
        double s = w * st.xty[i];
        for (std::size_t k = 0; k < i; ++k) s -= vinv[i * p + k] * z[k];
        z[i] = s / vinv[i * p + i];
    }
    double quad = 0.0;
    for (double v : z) quad += v * v;

    const double an = (w * static_cast<double>(st.n) + prior.a0) / 2.0;
    const double bn = (prior.b0 + w * st.yty - quad) / 2.0;
    if (!(bn > 0.0))
        throw std::runtime_error("log_evidence_blr: nonpositive posterior scale");
    const double a0h = prior.a0 / 2.0, b0h = prior.b0 / 2.0;
    return -0.5 * w * static_cast<double>(st.n) * detail::kLog2Pi -
           0.5 * static_cast<double>(p) * std::log(prior.alpha) - 0.5 * log_det_vinv +
           a0h * std::log(b0h) - std::lgamma(a0h) + std::lgamma(an) - an * std::log(bn);
}

// Convenience overloads on raw index views.

inline double elbo_blr(const BlrVariational& q, const BlrPrior& prior, const Dataset& data,
                       std::span<const std::size_t> rows, int power) {
    return elbo_blr(q, prior, BlrBlockStats::from_rows(data, rows), power);
}

inline BlrVariational cavi_update_blr(const BlrVariational& q, const BlrPrior& prior,
                                      const Dataset& data, std::span<const std::size_t> rows,
                                      int power) {
    return cavi_update_blr(q, prior, BlrBlockStats::from_rows(data, rows), power);
}

inline double log_evidence_blr(const BlrPrior& prior, const Dataset& data,
                               std::span<const std::size_t> rows, int power) {
    return log_evidence_blr(prior, BlrBlockStats::from_rows(data, rows), power);
}

}  // namespace m3vb

#endif  // M3VB_BLR_HPP
