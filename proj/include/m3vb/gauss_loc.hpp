#ifndef M3VB_GAUSS_LOC_HPP
#define M3VB_GAUSS_LOC_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "m3vb/core.hpp"

// Conjugate 1-D Gaussian location model with known noise variance:
//   x_i ~ N(theta, noise_var),  theta ~ N(mean0, var0).
// The variational family is a single Gaussian factor, so CAVI jumps straight
// to the exact powered posterior. Used for aggregation checks where every
// block's local posterior shares a common precision, and as the test bed for
// the min-max point estimator.

namespace m3vb {

struct GaussLocPrior {
    double mean0 = 0.0;
    double var0 = 1e8;

    void validate() const {
        if (!(var0 > 0.0)) throw std::invalid_argument("GaussLocPrior: var0 must be positive");
    }
};

struct GaussLocBlockStats {
    std::size_t n = 0;
    double sum_x = 0.0;
    double sum_xx = 0.0;

    static GaussLocBlockStats from(std::span<const double> x) {
        GaussLocBlockStats s;
        s.n = x.size();
        for (double v : x) {
            s.sum_x += v;
            s.sum_xx += v * v;
        }
        return s;
    }
};

inline DiagGaussian gauss_loc_init(const GaussLocPrior& prior) {
    prior.validate();
    return DiagGaussian({prior.mean0}, {prior.var0});
}

inline double elbo_gauss_loc(const DiagGaussian& q, const GaussLocPrior& prior,
                             const GaussLocBlockStats& st, double noise_var, int power) {
    q.validate();
    prior.validate();
    if (q.dim() != 1) throw std::invalid_argument("elbo_gauss_loc: state must be 1-D");
    if (power < 1) throw std::invalid_argument("elbo_gauss_loc: power must be >= 1");
    if (!(noise_var > 0.0)) throw std::invalid_argument("elbo_gauss_loc: noise_var must be positive");
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const double w = static_cast<double>(power);
    const double mu = q.mean[0], s2 = q.var[0];
    const double n = static_cast<double>(st.n);
    const double e_sse = st.sum_xx - 2.0 * mu * st.sum_x + n * (mu * mu + s2);
    const double loglik = w * (-0.5 * n * (kLog2Pi + std::log(noise_var)) - e_sse / (2.0 * noise_var));
    const double dmean = mu - prior.mean0;
    const double kl = 0.5 * std::log(prior.var0 / s2) + (s2 + dmean * dmean) / (2.0 * prior.var0) - 0.5;
    return loglik - kl;
}

inline DiagGaussian cavi_update_gauss_loc(const DiagGaussian& q, const GaussLocPrior& prior,
                                          const GaussLocBlockStats& st, double noise_var,
                                          int power) {
    (void)q;  // the coordinate optimum does not depend on the previous state
    prior.validate();
    if (power < 1) throw std::invalid_argument("cavi_update_gauss_loc: power must be >= 1");
    const double w = static_cast<double>(power);
    const double prec = w * static_cast<double>(st.n) / noise_var + 1.0 / prior.var0;
    const double mean = (w * st.sum_x / noise_var + prior.mean0 / prior.var0) / prec;
    return DiagGaussian({mean}, {1.0 / prec});
}

}  // namespace m3vb

#endif  // M3VB_GAUSS_LOC_HPP
