#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "m3vb/aggregator.hpp"
#include "m3vb/analysis.hpp"

using namespace m3vb;

namespace {

// Dataset made of m copies of one base block, partitioned copy-by-copy.
std::pair<Dataset, Partition> replicated_blocks(const Dataset& base, std::size_t m) {
    Dataset d = base;
    d.n_rows = base.n_rows * m;
    d.x.clear();
    d.y.clear();
    Partition part;
    part.n = base.n_rows;
    for (std::size_t j = 0; j < m; ++j) {
        d.x.insert(d.x.end(), base.x.begin(), base.x.end());
        if (base.kind == ModelKind::BLR) d.y.insert(d.y.end(), base.y.begin(), base.y.end());
        std::vector<std::size_t> rows(base.n_rows);
        std::iota(rows.begin(), rows.end(), j * base.n_rows);
        part.subsets.push_back(std::move(rows));
    }
    return {d, part};
}

Dataset blr_sample(std::size_t n, std::uint64_t seed, std::vector<double> beta = {1.0, -0.5}) {
    GenConfig gen;
    gen.kind = ModelKind::BLR;
    gen.beta_star = std::move(beta);
    gen.n_rows = n;
    RngStream rng(seed, 0);
    return generate_blr(gen, rng);
}

}  // namespace

TEST_CASE("identical subsets reduce to the single-subset powered optimum") {
    const Dataset base = blr_sample(40, 101);
    const std::size_t m = 5;
    auto [data, part] = replicated_blocks(base, m);
    const BlrPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 200;

    const auto result = m3vb_no_latent(data, part, prior, cfg);

    BlrVariational target = blr_init(2, prior);
    const auto st = BlrBlockStats::from_all(base);
    for (int i = 0; i < 500; ++i) target = cavi_update_blr(target, prior, st, static_cast<int>(m));

    for (std::size_t l = 0; l < 2; ++l) {
        REQUIRE(result.f.mu[l] == Catch::Approx(target.mu[l]).margin(1e-8));
        REQUIRE(result.f.s2[l] == Catch::Approx(target.s2[l]).margin(1e-10));
    }
    REQUIRE(result.f.c == Catch::Approx(target.c).margin(1e-8));
    REQUIRE(result.f.d == Catch::Approx(target.d).epsilon(1e-8));
}

TEST_CASE("two-step on identical subsets is the power-1 optimum with variance over m") {
    const Dataset base = blr_sample(40, 103);
    const std::size_t m = 4;
    auto [data, part] = replicated_blocks(base, m);
    const BlrPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 200;
    const auto result = m3vb_two_step_blr(data, part, prior, cfg);

    BlrVariational target = blr_init(2, prior);
    const auto st = BlrBlockStats::from_all(base);
    for (int i = 0; i < 500; ++i) target = cavi_update_blr(target, prior, st, 1);

    for (std::size_t l = 0; l < 2; ++l) {
        REQUIRE(result.f.mu[l] == Catch::Approx(target.mu[l]).margin(1e-8));
        REQUIRE(result.f.s2[l] == Catch::Approx(target.s2[l] / m).margin(1e-10));
    }
    REQUIRE(result.f.sigma2_mean() == Catch::Approx(target.sigma2_mean()).epsilon(1e-8));
}

TEST_CASE("rescale frozen cases and exactness") {
    SECTION("diagonal Gaussian") {
        const auto out = rescale(DiagGaussian({1.0}, {0.9}), 9);
        CHECK(out.mean[0] == 1.0);
        CHECK(out.var[0] == 0.1);
        const auto same = rescale(DiagGaussian({0.3}, {0.7}), 1);
        CHECK(same.mean[0] == 0.3);
        CHECK(same.var[0] == 0.7);
        CHECK_THROWS_AS(rescale(DiagGaussian({0.0}, {1.0}), 0), std::invalid_argument);
    }

    SECTION("inverse-gamma factor preserves the mean exactly, variance over m") {
        BlrVariational q;
        q.mu = {0.5};
        q.s2 = {0.04};
        q.c = 30.0;
        q.d = 14.0;
        const double mean0 = q.sigma2_mean();
        const double var0 = 2.0 * mean0 * mean0 / (q.c - 4.0);
        const auto r = rescale(q, 7);
        CHECK(r.sigma2_mean() == mean0);  // bit-level mean preservation
        const double var1 = 2.0 * r.sigma2_mean() * r.sigma2_mean() / (r.c - 4.0);
        CHECK(var1 == Catch::Approx(var0 / 7.0).epsilon(1e-12));
        CHECK(r.s2[0] == Catch::Approx(0.04 / 7.0).epsilon(1e-15));
    }

    SECTION("density-level definition integrates to one with variance over m") {
        // tabulate f(t) = sqrt(m) g(mu + sqrt(m)(t - mu)) for a stored Gaussian g
        const double mu = 0.4, var = 1.3;
        const std::size_t m = 6;
        const double sd = std::sqrt(var);
        auto g = [&](double t) {
            return std::exp(-(t - mu) * (t - mu) / (2.0 * var)) / std::sqrt(2.0 * M_PI * var);
        };
        auto f = [&](double t) { return std::sqrt(static_cast<double>(m)) * g(mu + std::sqrt(static_cast<double>(m)) * (t - mu)); };
        const double lo = mu - 12.0 * sd, hi = mu + 12.0 * sd;
        const int n = 40000;
        const double h = (hi - lo) / n;
        double mass = 0.0, mean = 0.0, second = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double t = lo + i * h;
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            mass += w * f(t);
            mean += w * t * f(t);
            second += w * t * t * f(t);
        }
        mass *= h / 3.0;
        mean *= h / 3.0;
        second *= h / 3.0;
        CHECK(mass == Catch::Approx(1.0).margin(1e-8));
        CHECK(mean == Catch::Approx(mu).margin(1e-8));
        CHECK(second - mean * mean == Catch::Approx(var / m).margin(1e-8));
    }
}

TEST_CASE("corrupted blocks are never selected near the clean optimum") {
    GenConfig gen;
    gen.kind = ModelKind::BLR;
    gen.beta_star = {2.0, -1.0, 0.5};
    gen.n_rows = 600;
    RngStream rng(111, 0);
    const Dataset clean = generate_blr(gen, rng);
    const Partition part0 = make_partition(clean.n_rows, 10, rng);
    auto [data, part] = contaminate(clean, part0, 0.2, {1e5, 1.0}, rng);
    REQUIRE(part.corrupted.size() == 2);

    const BlrPrior prior;
    const BlrVariational warm = pooled_vb_blr(clean, prior);
    AggregatorConfig cfg;
    cfg.iterations = 120;
    cfg.record_gap_vectors = true;
    const auto result = m3vb_no_latent(data, part, prior, cfg, warm);

    for (std::size_t i = 0; i < result.trace.items.size(); ++i) {
        const auto& item = result.trace.items[i];
        REQUIRE(part.corrupted.count(item.block) == 0);
        // recorded selection attains the lower median of the stored gaps
        const auto& gaps = result.trace.gap_vectors[i];
        const auto expect = median_index(gaps);
        REQUIRE(gaps[item.block] == expect.second);
        REQUIRE(item.median_gap == expect.second);
    }
}

TEST_CASE("pooled vb recovers the coefficients at the root-N rate") {
    GenConfig gen;
    gen.kind = ModelKind::BLR;
    gen.beta_star = {2.0, -1.0, 0.5, 0.0, 1.5, -0.5};
    gen.n_rows = 8000;
    const BlrPrior prior;
    int hits = 0;
    RngStream rng(211, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const Dataset d = generate_blr(gen, rng);
        const auto q = pooled_vb_blr(d, prior);
        if (l2_error(q.mu, gen.beta_star, false) < 0.05) ++hits;
        if (rep == 0) {
            // convergence never undercuts the initial bound
            const auto st = BlrBlockStats::from_all(d);
            REQUIRE(elbo_blr(q, prior, st, 1) >= elbo_blr(blr_init(6, prior), prior, st, 1));
        }
    }
    CHECK(hits >= 95);
}

TEST_CASE("pooled with one block and two-step at m=1 share the fixed point") {
    const Dataset data = blr_sample(150, 117, {0.7, -1.3, 0.1});
    RngStream rng(117, 1);
    const Partition part = make_partition(data.n_rows, 1, rng);
    const BlrPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 400;
    const auto two_step = m3vb_two_step_blr(data, part, prior, cfg);
    const auto pooled = pooled_vb_blr(data, prior);
    for (std::size_t l = 0; l < 3; ++l) {
        REQUIRE(two_step.f.mu[l] == Catch::Approx(pooled.mu[l]).margin(1e-8));
        REQUIRE(two_step.f.s2[l] == Catch::Approx(pooled.s2[l]).margin(1e-10));
    }
}

TEST_CASE("subset-count validation") {
    const Dataset data = blr_sample(60, 119);
    RngStream rng(119, 1);
    const Partition p2 = make_partition(data.n_rows, 2, rng);
    const Partition p1 = make_partition(data.n_rows, 1, rng);
    const BlrPrior prior;
    AggregatorConfig cfg;
    CHECK_THROWS_AS(m3vb_no_latent(data, p2, prior, cfg), std::invalid_argument);
    CHECK_THROWS_AS(m3vb_no_latent(data, p1, prior, cfg), std::invalid_argument);
    CHECK_THROWS_AS(m3vb_two_step_blr(data, p2, prior, cfg), std::invalid_argument);
    CHECK_NOTHROW(m3vb_two_step_blr(data, p1, prior, cfg));
}

TEST_CASE("one-step latent with a single block is plain power-1 CAVI") {
    GenConfig gen;
    gen.kind = ModelKind::GMM;
    gen.theta_star = {-2.0, 2.0};
    gen.weights = {0.5, 0.5};
    gen.n_rows = 300;
    RngStream rng(121, 0);
    const Dataset data = generate_gmm(gen, rng);
    Partition part;
    part.n = data.n_rows;
    part.subsets.emplace_back(data.n_rows);
    std::iota(part.subsets[0].begin(), part.subsets[0].end(), std::size_t{0});

    const GmmPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 300;
    cfg.seed = 777;
    const auto result = m3vb_latent_one_step(data, part, prior, 2, cfg);
    const auto pooled = pooled_vb_gmm(data, prior, 2, 777);
    for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(result.f.mean[c] == Catch::Approx(pooled.mean[c]).margin(1e-8));
        REQUIRE(result.f.s2[c] == Catch::Approx(pooled.s2[c]).margin(1e-10));
    }
}

TEST_CASE("latent identical subsets: one-step powered optimum, two-step rescale") {
    GenConfig gen;
    gen.kind = ModelKind::GMM;
    gen.theta_star = {-2.0, 2.0};
    gen.weights = {0.5, 0.5};
    gen.n_rows = 80;
    RngStream rng(123, 0);
    const Dataset base = generate_gmm(gen, rng);
    const std::size_t m = 5;
    auto [data, part] = replicated_blocks(base, m);
    const GmmPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 250;
    cfg.seed = 55;

    const auto one = m3vb_latent_one_step(data, part, prior, 2, cfg);
    const auto two = m3vb_latent(data, part, prior, 2, cfg);

    RngStream init_rng(55, 0x1217);
    GmmVariational t1 = gmm_init(data.x, 2, init_rng);
    GmmVariational t2 = t1;
    for (int i = 0; i < 500; ++i) t1 = cavi_update_gmm(t1, prior, base.x, static_cast<int>(m));
    for (int i = 0; i < 500; ++i) t2 = cavi_update_gmm(t2, prior, base.x, 1);

    for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(one.f.mean[c] == Catch::Approx(t1.mean[c]).margin(1e-8));
        REQUIRE(one.f.s2[c] == Catch::Approx(t1.s2[c]).margin(1e-10));
        REQUIRE(two.f.mean[c] == Catch::Approx(t2.mean[c]).margin(1e-8));
        REQUIRE(two.f.s2[c] == Catch::Approx(t2.s2[c] / m).margin(1e-10));
    }
}

TEST_CASE("solver runs are deterministic") {
    GenConfig gen;
    gen.kind = ModelKind::BLR;
    gen.beta_star = {1.0, 0.5};
    gen.n_rows = 300;
    RngStream rng(131, 0);
    const Dataset data = generate_blr(gen, rng);
    const Partition part = make_partition(data.n_rows, 6, rng);
    const BlrPrior prior;
    AggregatorConfig cfg;
    cfg.iterations = 80;

    const auto a = m3vb_no_latent(data, part, prior, cfg);
    const auto b = m3vb_no_latent(data, part, prior, cfg);
    REQUIRE(a.f.mu == b.f.mu);
    REQUIRE(a.f.s2 == b.f.s2);
    REQUIRE(a.trace.items.size() == b.trace.items.size());
    for (std::size_t i = 0; i < a.trace.items.size(); ++i) {
        REQUIRE(a.trace.items[i].block == b.trace.items[i].block);
        REQUIRE(a.trace.items[i].median_gap == b.trace.items[i].median_gap);
    }
}

TEST_CASE("wasp barycenter closed form") {
    SECTION("frozen two-Gaussian case") {
        const auto bary = wasp_barycenter(std::vector<DiagGaussian>{{{0.0}, {1.0}}, {{2.0}, {9.0}}});
        CHECK(bary.mean[0] == Catch::Approx(1.0).margin(1e-14));
        CHECK(bary.var[0] == Catch::Approx(4.0).margin(1e-14));
        // fixed-point oracle for the barycenter variance
        double v = 1.0;
        for (int i = 0; i < 200; ++i) {
            const double root = 0.5 * std::sqrt(v * 1.0) + 0.5 * std::sqrt(v * 9.0);
            v = root * root / v;
        }
        CHECK(bary.var[0] == Catch::Approx(v).margin(1e-10));
    }

    SECTION("identical inputs reproduce the input") {
        const DiagGaussian g({0.5, -1.0}, {0.3, 0.8});
        const auto bary = wasp_barycenter(std::vector<DiagGaussian>{g, g, g});
        CHECK(bary.mean == g.mean);
        for (std::size_t l = 0; l < 2; ++l) CHECK(bary.var[l] == Catch::Approx(g.var[l]).margin(1e-14));
    }

    SECTION("empty input rejected") {
        CHECK_THROWS_AS(wasp_barycenter(std::vector<DiagGaussian>{}), std::invalid_argument);
    }

    SECTION("one corrupted subset hurts the barycenter more than the median scheme") {
        GenConfig gen;
        gen.kind = ModelKind::BLR;
        gen.beta_star = {2.0, -1.0, 0.5, 0.0, 1.5, -0.5};
        gen.n_rows = 100 * 20;
        RngStream rng(137, 0);
        const Dataset clean = generate_blr(gen, rng);
        const Partition part0 = make_partition(clean.n_rows, 20, rng);
        auto [data, part] = contaminate(clean, part0, 0.05, {10.0, 1.0}, rng);
        REQUIRE(part.corrupted.size() == 1);
        const BlrPrior prior;
        AggregatorConfig cfg;
        cfg.iterations = 300;
        const auto robust = m3vb_no_latent(data, part, prior, cfg);
        const auto bary = wasp_barycenter(local_vb_blr(data, part, prior));
        const double err_robust = l2_error(robust.f.mu, gen.beta_star, false);
        const double err_bary = l2_error(bary.mu, gen.beta_star, false);
        INFO("robust " << err_robust << " barycenter " << err_bary);
        CHECK(err_bary > err_robust);
    }
}

TEST_CASE("direct-median solver") {
    SECTION("identical subsets give the powered local optimum") {
        const Dataset base = blr_sample(30, 139);
        const std::size_t m = 4;
        auto [data, part] = replicated_blocks(base, m);
        const BlrPrior prior;
        AggregatorConfig cfg;
        cfg.iterations = 200;
        const auto result = mvb_direct_median(data, part, prior, cfg);
        BlrVariational target = blr_init(2, prior);
        const auto st = BlrBlockStats::from_all(base);
        for (int i = 0; i < 500; ++i) target = cavi_update_blr(target, prior, st, static_cast<int>(m));
        for (std::size_t l = 0; l < 2; ++l)
            REQUIRE(result.f.mu[l] == Catch::Approx(target.mu[l]).margin(1e-8));
    }

    SECTION("median choice is invariant to a common shift of the gaps") {
        RngStream rng(141, 0);
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<double> v;
            const std::size_t n = 1 + rng.uniform_below(15);
            for (std::size_t i = 0; i < n; ++i) v.push_back(rng.normal());
            const double shift = 10.0 * rng.normal();
            std::vector<double> shifted(v);
            for (auto& x : shifted) x += shift;
            REQUIRE(median_index(shifted).first == median_index(v).first);
        }
    }

    SECTION("models without tractable evidence are rejected") {
        GenConfig gen;
        gen.kind = ModelKind::GMM;
        gen.theta_star = {0.0};
        gen.weights = {1.0};
        gen.n_rows = 30;
        RngStream rng(143, 0);
        const Dataset gmm_data = generate_gmm(gen, rng);
        const Partition part = make_partition(30, 3, rng);
        const BlrPrior prior;
        AggregatorConfig cfg;
        CHECK_THROWS_AS(mvb_direct_median(gmm_data, part, prior, cfg), std::invalid_argument);
    }
}

TEST_CASE("min-max point estimator") {
    AggregatorConfig cfg;
    cfg.iterations = 3000;

    SECTION("identical blocks converge to the common minimizer") {
        std::vector<std::vector<double>> blocks(7, std::vector<double>{1.2, 1.4, 1.0, 1.2});
        const auto loss = GaussianLocationLoss::from_blocks(blocks);
        const auto result = minmax_point_estimator(loss, cfg);
        CHECK(result.theta[0] == Catch::Approx(1.2).margin(1e-4));
    }

    SECTION("one far-off block is ignored") {
        RngStream rng(151, 0);
        std::vector<std::vector<double>> blocks;
        std::vector<double> centers;
        for (int j = 0; j < 20; ++j) {
            std::vector<double> b;
            for (int i = 0; i < 50; ++i) b.push_back(rng.normal());
            double mean = 0.0;
            for (double v : b) mean += v;
            centers.push_back(mean / b.size());
            blocks.push_back(std::move(b));
        }
        blocks.push_back(std::vector<double>(50, 100.0));
        centers.push_back(100.0);
        const auto loss = GaussianLocationLoss::from_blocks(blocks);
        const auto result = minmax_point_estimator(loss, cfg);
        CHECK(std::abs(result.theta[0]) < 0.1);

        // cross-check against the brute-force quadratic oracle
        const auto oracle = brute_force_minmax_median(centers, 50.0 / 2.0, BruteForceGrid{1e-3, 0.5, 1e-2});
        CHECK(result.theta[0] == Catch::Approx(oracle.theta_f).margin(0.05));
    }

    SECTION("divergent configurations are detected") {
        // a pathological loss whose gradient explodes
        struct ExplodingLoss {
            std::size_t blocks() const { return 3; }
            std::size_t dim() const { return 1; }
            double loglik(const std::vector<double>& t, std::size_t) const { return t[0] * t[0]; }
            std::vector<double> grad(const std::vector<double>& t, std::size_t) const {
                return {1e9 * (t[0] + 1.0)};
            }
        };
        CHECK_THROWS_AS(minmax_point_solve(ExplodingLoss{}, {1.0}, {2.0}, cfg), std::runtime_error);
    }
}
