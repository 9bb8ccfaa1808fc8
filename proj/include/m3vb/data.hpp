#ifndef M3VB_DATA_HPP
#define M3VB_DATA_HPP

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3vb/core.hpp"

// Synthetic data generation for the two simulation models, CSV ingestion,
// even partitioning into subsets, and subset-level contamination.

namespace m3vb {

enum class ModelKind { BLR, GMM };

inline const char* to_string(ModelKind k) {
    return k == ModelKind::BLR ? "blr" : "gmm";
}

/// Observations for one experiment. BLR stores an N x p covariate matrix
/// (row-major) plus responses; GMM stores a single column of observations.
struct Dataset {
    ModelKind kind = ModelKind::BLR;
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;              // p for BLR, 1 for GMM
    std::vector<double> x;               // row-major n_rows x n_cols
    std::vector<double> y;               // responses, BLR only

    double xat(std::size_t i, std::size_t j) const { return x[i * n_cols + j]; }

    void validate() const {
        if (n_rows == 0 || n_cols == 0)
            throw std::invalid_argument("Dataset: empty");
        if (x.size() != n_rows * n_cols)
            throw std::invalid_argument("Dataset: covariate storage size mismatch");
        if (kind == ModelKind::BLR && y.size() != n_rows)
            throw std::invalid_argument("Dataset: responses misaligned with rows");
        if (kind == ModelKind::GMM && !y.empty())
            throw std::invalid_argument("Dataset: GMM data carries no responses");
        for (double v : x)
            if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite covariate");
        for (double v : y)
            if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite response");
    }
};

/// Disjoint index sets covering {0..N-1} plus the corrupted-subset ids.
struct Partition {
    std::vector<std::vector<std::size_t>> subsets;
    std::set<std::size_t> corrupted;
    std::size_t n = 0;  // nominal per-subset size, floor(N/m)

    std::size_t m() const { return subsets.size(); }
};

/// Contamination scheme: corrupted entries are redrawn from N(mean, var).
/// For BLR the responses are replaced; for GMM the observations.
struct ContaminationScheme {
    double mean = 10.0;
    double var = 1.0;

    static ContaminationScheme defaults_for(ModelKind kind) {
        // GMM default is N(0, 5) with 5 read as a variance
        return kind == ModelKind::BLR ? ContaminationScheme{10.0, 1.0}
                                      : ContaminationScheme{0.0, 5.0};
    }
};

/// Generator settings for synthetic data.
struct GenConfig {
    ModelKind kind = ModelKind::BLR;
    std::size_t n_rows = 0;
    std::vector<double> beta_star;       // BLR coefficients (length p)
    double sigma = 1.0;                  // BLR noise standard deviation
    std::vector<double> theta_star;      // GMM component means (length K)
    std::vector<double> weights;         // GMM mixing proportions

    void validate() const {
        if (n_rows == 0) throw std::invalid_argument("GenConfig: N must be >= 1");
        if (kind == ModelKind::BLR) {
            if (beta_star.empty())
                throw std::invalid_argument("GenConfig: beta_star empty");
            if (sigma < 0.0)
                throw std::invalid_argument("GenConfig: sigma must be >= 0");
        } else {
            if (theta_star.empty())
                throw std::invalid_argument("GenConfig: theta_star empty");
            if (weights.size() != theta_star.size())
                throw std::invalid_argument("GenConfig: weights/theta_star length mismatch");
            double s = 0.0;
            for (double w : weights) {
                if (w < 0.0) throw std::invalid_argument("GenConfig: negative weight");
                s += w;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw std::invalid_argument("GenConfig: weights must sum to 1");
        }
    }
};

/// Draw covariates iid N(0, I_p) and responses y = x'beta + N(0, sigma^2).
inline Dataset generate_blr(const GenConfig& cfg, RngStream& rng) {
    if (cfg.kind != ModelKind::BLR)
        throw std::invalid_argument("generate_blr: config kind is not BLR");
    cfg.validate();
    const std::size_t p = cfg.beta_star.size();
    Dataset d;
    d.kind = ModelKind::BLR;
    d.n_rows = cfg.n_rows;
    d.n_cols = p;
    d.x.resize(cfg.n_rows * p);
    d.y.resize(cfg.n_rows);
    for (std::size_t i = 0; i < cfg.n_rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double v = rng.normal();
            d.x[i * p + j] = v;
            dot += v * cfg.beta_star[j];
        }
        d.y[i] = dot + cfg.sigma * rng.normal();
    }
    return d;
}

/// Draw a univariate mixture: pick a component by weight, then N(theta_k, 1).
inline Dataset generate_gmm(const GenConfig& cfg, RngStream& rng) {
    if (cfg.kind != ModelKind::GMM)
        throw std::invalid_argument("generate_gmm: config kind is not GMM");
    cfg.validate();
    const std::size_t k_comp = cfg.theta_star.size();
    std::vector<double> cum(k_comp);
    std::partial_sum(cfg.weights.begin(), cfg.weights.end(), cum.begin());
    cum.back() = 1.0;
    Dataset d;
    d.kind = ModelKind::GMM;
    d.n_rows = cfg.n_rows;
    d.n_cols = 1;
    d.x.resize(cfg.n_rows);
    for (std::size_t i = 0; i < cfg.n_rows; ++i) {
        const double u = rng.uniform01();
        std::size_t k = 0;
        while (k + 1 < k_comp && u >= cum[k]) ++k;
        d.x[i] = cfg.theta_star[k] + rng.normal();
    }
    return d;
}

/// Randomly assign rows to m subsets of near-equal size. The remainder
/// N mod m is spread one row each over the first subsets.
inline Partition make_partition(std::size_t n_rows, std::size_t m, RngStream& rng) {
    if (m == 0 || m > n_rows)
        throw std::invalid_argument("make_partition: need 1 <= m <= N");
    std::vector<std::size_t> perm(n_rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    Partition part;
    part.n = n_rows / m;
    part.subsets.resize(m);
    const std::size_t rem = n_rows % m;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t sz = part.n + (j < rem ? 1 : 0);
        part.subsets[j].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                               perm.begin() + static_cast<std::ptrdiff_t>(pos + sz));
        pos += sz;
    }
    return part;
}

/// Corrupt floor(alpha * m) subsets chosen uniformly at random: inside each,
/// the scheme-designated field is redrawn from N(mean, var); everything else
/// is left bit-identical. alpha = 0 is the identity.
inline std::pair<Dataset, Partition> contaminate(const Dataset& data, const Partition& part,
                                                 double alpha, const ContaminationScheme& scheme,
                                                 RngStream& rng) {
    if (alpha < 0.0 || alpha >= 0.5)
        throw std::invalid_argument("contaminate: alpha must be in [0, 0.5)");
    if (scheme.var < 0.0)
        throw std::invalid_argument("contaminate: scheme variance must be >= 0");
    Dataset out = data;
    Partition pout = part;
    pout.corrupted.clear();
    const std::size_t m = part.m();
    const auto n_bad = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(m)));
    if (n_bad == 0) return {out, pout};

    std::vector<std::size_t> ids(m);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    rng.shuffle(ids);
    pout.corrupted.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_bad));

    const double sd = std::sqrt(scheme.var);
    for (std::size_t j : pout.corrupted) {
        for (std::size_t i : part.subsets[j]) {
            const double draw = scheme.mean + sd * rng.normal();
            if (data.kind == ModelKind::BLR)
                out.y[i] = draw;
            else
                out.x[i] = draw;
        }
    }
    return {out, pout};
}

namespace detail {

inline double parse_cell(const std::string& tok, std::size_t row, std::size_t col) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("CSV parse failure at row " + std::to_string(row + 1) +
                                 ", column " + std::to_string(col + 1) + ": '" + tok + "'");
    }
    while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
    if (used != tok.size())
        throw std::runtime_error("CSV parse failure at row " + std::to_string(row + 1) +
                                 ", column " + std::to_string(col + 1) + ": '" + tok + "'");
    if (!std::isfinite(v))
        throw std::runtime_error("CSV non-finite value at row " + std::to_string(row + 1) +
                                 ", column " + std::to_string(col + 1));
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

/// Read a numeric CSV. BLR layout: columns x_1..x_p,y; GMM layout: one
/// column x. Decimal point '.', UTF-8, optional header row.
inline Dataset load_csv(const std::string& path, ModelKind kind, bool has_header = false) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open '" + path + "'");
    Dataset d;
    d.kind = kind;
    std::string line;
    std::size_t row = 0;
    std::size_t ncols = 0;
    bool skipped_header = !has_header;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!skipped_header) {
            skipped_header = true;
            continue;
        }
        const auto toks = detail::split_csv_line(line);
        if (ncols == 0) {
            ncols = toks.size();
            if (kind == ModelKind::GMM && ncols != 1)
                throw std::runtime_error("load_csv: GMM data must have exactly one column");
            if (kind == ModelKind::BLR && ncols < 2)
                throw std::runtime_error("load_csv: BLR data needs x columns plus a y column");
        } else if (toks.size() != ncols) {
            throw std::runtime_error("load_csv: ragged row " + std::to_string(row + 1) +
                                     " (expected " + std::to_string(ncols) + " columns, got " +
                                     std::to_string(toks.size()) + ")");
        }
        std::vector<double> vals(ncols);
        for (std::size_t c = 0; c < ncols; ++c) vals[c] = detail::parse_cell(toks[c], row, c);
        rows.push_back(std::move(vals));
        ++row;
    }
    if (rows.empty()) throw std::runtime_error("load_csv: no data rows in '" + path + "'");
    d.n_rows = rows.size();
    d.n_cols = (kind == ModelKind::BLR) ? ncols - 1 : 1;
    d.x.reserve(d.n_rows * d.n_cols);
    if (kind == ModelKind::BLR) d.y.reserve(d.n_rows);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < d.n_cols; ++c) d.x.push_back(r[c]);
        if (kind == ModelKind::BLR) d.y.push_back(r.back());
    }
    d.validate();
    return d;
}

/// Write a Dataset in the load_csv layout with 17 significant digits.
inline void save_csv(const Dataset& data, const std::string& path, bool header = false) {
    data.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv: cannot open '" + path + "' for writing");
    char buf[64];
    if (header) {
        if (data.kind == ModelKind::BLR) {
            for (std::size_t c = 0; c < data.n_cols; ++c) out << "x_" << (c + 1) << ",";
            out << "y\n";
        } else {
            out << "x\n";
        }
    }
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        for (std::size_t c = 0; c < data.n_cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", data.xat(i, c));
            out << buf;
            if (c + 1 < data.n_cols || data.kind == ModelKind::BLR) out << ',';
        }
        if (data.kind == ModelKind::BLR) {
            std::snprintf(buf, sizeof buf, "%.17g", data.y[i]);
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace m3vb

#endif  // M3VB_DATA_HPP
