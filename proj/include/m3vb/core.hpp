#ifndef M3VB_CORE_HPP
#define M3VB_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Shared numerical kernels: factorized Gaussians, closed-form divergences,
// special functions, order statistics and the seeded RNG stream used across
// the library.

namespace m3vb {

/// Factorized (mean-field) Gaussian over a parameter vector.
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> var;

    DiagGaussian() = default;
    DiagGaussian(std::vector<double> mean_, std::vector<double> var_)
        : mean(std::move(mean_)), var(std::move(var_)) {
        validate();
    }

    std::size_t dim() const { return mean.size(); }

    void validate() const {
        if (mean.empty() || mean.size() != var.size())
            throw std::invalid_argument("DiagGaussian: mean/var size mismatch or empty");
        for (double v : var)
            if (!(v > 0.0) || !std::isfinite(v))
                throw std::invalid_argument("DiagGaussian: variance must be positive and finite");
        for (double m : mean)
            if (!std::isfinite(m))
                throw std::invalid_argument("DiagGaussian: non-finite mean");
    }
};

/// KL(p || q) between two factorized Gaussians of equal dimension.
inline double kl_diag_gaussians(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.dim() != q.dim())
        throw std::invalid_argument("kl_diag_gaussians: dimension mismatch");
    p.validate();
    q.validate();
    double kl = 0.0;
    for (std::size_t l = 0; l < p.dim(); ++l) {
        const double d = p.mean[l] - q.mean[l];
        kl += 0.5 * std::log(q.var[l] / p.var[l]) +
              (p.var[l] + d * d) / (2.0 * q.var[l]) - 0.5;
    }
    // rounding can leave a tiny negative residue on (near-)equal inputs
    return std::max(0.0, kl);
}

/// Digamma via upward recurrence into the asymptotic-series regime.
/// Absolute error below 1e-12 on [1e-3, 1e6].
inline double digamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("digamma: requires x > 0");
    double value = 0.0;
    while (x < 10.0) {
        value -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // ln x - 1/(2x) - sum_k B_{2k} / (2k x^{2k})
    double series = inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                    inv2 * (1.0 / 252.0 -
                    inv2 * (1.0 / 240.0 -
                    inv2 * (1.0 / 132.0 -
                    inv2 * (691.0 / 32760.0))))));
    return value + std::log(x) - 0.5 * inv - series;
}

/// Overflow-safe log(sum_i exp(v_i)).
inline double log_sum_exp(const std::vector<double>& v) {
    if (v.empty())
        throw std::invalid_argument("log_sum_exp: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// Lower median: the floor((len+1)/2)-th order statistic, with ties broken
/// by the smallest index attaining it. Deterministic.
inline std::pair<std::size_t, double> median_index(const std::vector<double>& values) {
    if (values.empty())
        throw std::invalid_argument("median_index: empty input");
    for (double x : values)
        if (std::isnan(x))
            throw std::invalid_argument("median_index: NaN in input");
    std::vector<double> sorted(values);
    const std::size_t k = (values.size() + 1) / 2 - 1;  // 0-based lower median
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double med = sorted[k];
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] == med) return {i, med};
    throw std::logic_error("median_index: median value not found");  // unreachable
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Combine integers into a single 64-bit seed (order-sensitive).
inline std::uint64_t mix_seed(std::uint64_t a) {
    std::uint64_t s = a;
    return detail::splitmix64(s);
}
template <class... Rest>
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, Rest... rest) {
    std::uint64_t s = a ^ 0xD1B54A32D192ED03ULL;
    std::uint64_t h = detail::splitmix64(s);
    h ^= b + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    if constexpr (sizeof...(rest) == 0)
        return mix_seed(h);
    else
        return mix_seed(h, rest...);
}

/// Splittable, value-type RNG stream (xoshiro256++ core). Identical
/// (seed, stream_id) pairs reproduce bit-identical draws; distinct stream
/// ids give statistically independent streams. Not thread-safe per object;
/// give each worker its own stream.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0) {
        std::uint64_t sm = seed;
        (void)detail::splitmix64(sm);
        sm ^= 0xA3EC647659359ACDULL * (stream_id + 1);
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl64(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform on (0, 1); never returns an exact endpoint.
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_below: n must be > 0");
        // rejection sampling over the top bits keeps the draw unbiased
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal draw (Box-Muller, spare cached in the stream state).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_below(i))]);
    }

  private:
    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Deterministic generator for the given (seed, stream_id) pair.
inline RngStream rng_stream(std::uint64_t seed, std::uint64_t stream_id) {
    return RngStream(seed, stream_id);
}

}  // namespace m3vb

#endif  // M3VB_CORE_HPP
