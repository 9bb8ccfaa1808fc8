#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "m3vb/cli.hpp"
#include "m3vb/config.hpp"
#include "m3vb/experiment.hpp"
#include "m3vb/plot.hpp"

using namespace m3vb;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// records.csv with the wall-time column blanked, for byte comparisons
std::string drop_wall_time(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    bool header = true;
    std::size_t wall_col = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> tok;
        std::string cur;
        std::istringstream is(line);
        while (std::getline(is, cur, ',')) tok.push_back(cur);
        if (header) {
            for (std::size_t i = 0; i < tok.size(); ++i)
                if (tok[i] == "wall_time_seconds") wall_col = i;
            header = false;
        } else if (wall_col < tok.size()) {
            tok[wall_col] = "";
        }
        for (std::size_t i = 0; i < tok.size(); ++i) out << (i ? "," : "") << tok[i];
        out << "\n";
    }
    return out.str();
}

int run_cli(std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "m3vb");
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

constexpr const char* kSmokeConfig = R"(
# smoke experiment
[experiment]
model = blr
n_grid = 60
m_grid = 4
alpha = 0.0
modes = m3vb_one_step
repetitions = 2
base_seed = 4242
workers = 2

[generator]
beta_star = 1.0, -0.5
sigma = 1.0

[solver]
iterations = 60
)";

}  // namespace

TEST_CASE("config parser basics") {
    const auto cfg = Config::parse_text(R"(
[a]
x = 3
y = 2.5        # trailing comment
name = hello
list = 1, 2, 3
flag = true

[b]
empty_ok = 0
)");
    CHECK(cfg.get_int("a", "x", 0) == 3);
    CHECK(cfg.get_double("a", "y", 0.0) == 2.5);
    CHECK(cfg.get_string("a", "name", "") == "hello");
    CHECK(cfg.get_ints("a", "list") == std::vector<long long>{1, 2, 3});
    CHECK(cfg.get_bool("a", "flag", false));
    CHECK(cfg.get_int("a", "missing", 7) == 7);
    CHECK_THROWS_AS(cfg.require_string("a", "missing"), ConfigError);
    CHECK_THROWS_AS(Config::parse_text("[broken\nx=1"), ConfigError);
    CHECK_THROWS_AS(Config::parse_text("just a line"), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("a", "name", 0), ConfigError);
}

TEST_CASE("experiment config validation") {
    auto parse = [](const std::string& text) {
        return experiment_config_from(Config::parse_text(text));
    };
    CHECK_THROWS_AS(parse("[experiment]\nmodel = qda\nn_grid = 10\nm_grid = 2\nmodes = pooled"),
                    ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nmodel = blr\nm_grid = 2\nmodes = pooled"), ConfigError);
    CHECK_THROWS_AS(
        parse("[experiment]\nmodel = blr\nn_grid = 10\nm_grid = 2\nmodes = pooled\nalpha = 0.7"),
        ConfigError);
    const auto ok = parse(kSmokeConfig);
    CHECK(ok.model == ModelKind::BLR);
    CHECK(ok.n_grid == std::vector<std::size_t>{60});
    CHECK(ok.repetitions == 2);
    CHECK(ok.beta_star == std::vector<double>{1.0, -0.5});
}

TEST_CASE("smoke sweep produces records, csv and plots") {
    const auto dir = temp_dir("m3vb_smoke");
    auto cfg = experiment_config_from(Config::parse_text(kSmokeConfig));
    cfg.output_dir = dir.string();
    const auto records = run_experiment(cfg);
    REQUIRE(records.size() == 2);
    for (const auto& r : records) {
        CHECK(r.status == "ok");
        CHECK(r.mode == "m3vb_one_step");
        CHECK(r.means.size() == 2);
        CHECK(std::isfinite(r.l2_error));
        CHECK(r.l2_error < 1.0);
    }
    CHECK(fs::exists(dir / "records.csv"));
    CHECK(fs::exists(dir / "error_vs_n.svg"));
    CHECK(fs::exists(dir / "error_boxplot.svg"));
    const std::string svg = slurp(dir / "error_vs_n.svg");
    CHECK(svg.find("<polyline") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("sweep output is deterministic up to wall time") {
    const auto dir1 = temp_dir("m3vb_det1");
    const auto dir2 = temp_dir("m3vb_det2");
    auto cfg = experiment_config_from(Config::parse_text(kSmokeConfig));
    cfg.output_dir = dir1.string();
    run_experiment(cfg);
    cfg.output_dir = dir2.string();
    cfg.workers = 1;  // worker count must not affect the bytes
    run_experiment(cfg);
    CHECK(drop_wall_time(slurp(dir1 / "records.csv")) == drop_wall_time(slurp(dir2 / "records.csv")));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("blr point-estimator mode produces a sane coefficient estimate") {
    const auto dir = temp_dir("m3vb_blr_point");
    auto cfg = experiment_config_from(Config::parse_text(kSmokeConfig));
    cfg.modes = {AggregatorMode::MINMAX_POINT};
    cfg.repetitions = 1;
    cfg.iterations = 1500;
    cfg.output_dir = dir.string();
    const auto records = run_experiment(cfg);
    REQUIRE(records.size() == 1);
    CHECK(records[0].status == "ok");
    CHECK(records[0].means.size() == 2);
    CHECK(records[0].l2_error < 0.5);
    fs::remove_all(dir);
}

TEST_CASE("gmm sweep covers every mode, recording the unsupported one") {
    const auto dir = temp_dir("m3vb_gmm_sweep");
    ExperimentConfig cfg;
    cfg.model = ModelKind::GMM;
    cfg.theta_star = {-3.0, 0.0, 3.0};
    cfg.n_grid = {80};
    cfg.m_grid = {4};
    cfg.alpha = 0.0;
    cfg.modes = {AggregatorMode::M3VB_TWO_STEP, AggregatorMode::POOLED, AggregatorMode::WASP,
                 AggregatorMode::MINMAX_POINT, AggregatorMode::MVB};
    cfg.repetitions = 1;
    cfg.base_seed = 99;
    cfg.iterations = 120;
    cfg.output_dir = dir.string();
    const auto records = run_experiment(cfg);
    REQUIRE(records.size() == 5);
    for (const auto& r : records) {
        if (r.mode == "mvb") {
            CHECK(r.status.rfind("error:", 0) == 0);  // needs a tractable evidence
        } else {
            INFO(r.mode << " -> " << r.status);
            CHECK(r.status == "ok");
            CHECK(r.means.size() == 3);
            CHECK(r.l2_error < 1.5);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("records csv round trip and solver-error rows") {
    RunRecord good;
    good.model = "blr";
    good.mode = "pooled";
    good.m = 4;
    good.n = 60;
    good.alpha = 0.05;
    good.repetition = 3;
    good.seed = 99;
    good.l2_error = 0.12345678901234567;
    good.kl_to_reference = 1.5;
    good.means = {1.0 / 3.0, -2.0 / 7.0};
    good.wall_time_seconds = 0.5;
    RunRecord bad;
    bad.model = "gmm";
    bad.mode = "mvb";
    bad.m = 3;
    bad.n = 10;
    bad.repetition = 0;
    bad.seed = 1;
    bad.status = "error:mvb needs a tractable evidence";

    const auto dir = temp_dir("m3vb_csv");
    const auto path = dir / "records.csv";
    {
        std::ofstream out(path, std::ios::binary);
        out << records_to_csv({good, bad}, 2);
    }
    const auto back = records_from_csv(path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].l2_error == good.l2_error);  // 17 digits round-trip exactly
    CHECK(back[0].means == good.means);
    CHECK(back[0].kl_to_reference == good.kl_to_reference);
    CHECK(back[1].status == bad.status);
    CHECK_FALSE(back[1].kl_to_reference.has_value());
    CHECK(std::isnan(back[1].l2_error));
    fs::remove_all(dir);
}

TEST_CASE("plot emitters") {
    const auto dir = temp_dir("m3vb_plot");
    std::vector<RunRecord> records;
    for (int rep = 0; rep < 8; ++rep) {
        for (std::size_t n : {100, 200}) {
            RunRecord r;
            r.model = "blr";
            r.mode = rep % 2 == 0 ? "pooled" : "m3vb_one_step";
            r.m = 4;
            r.n = n;
            r.repetition = rep;
            r.l2_error = 0.1 * (rep + 1) / static_cast<double>(n);
            records.push_back(r);
        }
    }

    SECTION("lineplot emits one polyline per series, byte-deterministic") {
        const auto p1 = dir / "a.svg";
        const auto p2 = dir / "b.svg";
        emit_lineplot(records, "n", "l2_error", "mode", p1.string());
        emit_lineplot(records, "n", "l2_error", "mode", p2.string());
        const std::string svg = slurp(p1);
        std::size_t count = 0, pos = 0;
        while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
            ++count;
            pos += 9;
        }
        CHECK(count == 2);
        CHECK(svg == slurp(p2));
    }

    SECTION("unknown fields are named in the error") {
        try {
            emit_lineplot(records, "n", "no_such_field", "mode", (dir / "x.svg").string());
            FAIL("expected an exception");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("no_such_field") != std::string::npos);
        }
    }

    SECTION("boxplot quantiles follow the linear interpolation rule") {
        CHECK(quantile_linear({1, 2, 3, 4, 5}, 0.5) == 3.0);
        CHECK(quantile_linear({1, 2, 3, 4, 5}, 0.25) == 2.0);
        CHECK(quantile_linear({1, 2, 3, 4, 5}, 0.75) == 4.0);
        CHECK(quantile_linear({1, 2, 3, 4}, 0.5) == 2.5);
        const auto p = dir / "box.svg";
        emit_boxplot(records, {"mode"}, "l2_error", p.string());
        CHECK(slurp(p).find("<rect") != std::string::npos);
    }

    SECTION("empty groups are skipped with a margin warning") {
        const auto p = dir / "box_empty.svg";
        std::vector<BoxGroup> groups{{"full", {1.0, 2.0, 3.0}}, {"hollow", {}}};
        emit_boxplot_svg(groups, "value", p.string());
        const auto svg = slurp(p);
        CHECK(svg.find("empty group(s) skipped") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli exit codes and artifacts") {
    const auto dir = temp_dir("m3vb_cli");

    SECTION("unknown subcommand is a usage error") {
        CHECK(run_cli({"frobnicate"}) == 1);
    }

    SECTION("missing config file is a config error") {
        CHECK(run_cli({"run", (dir / "missing.toml").string()}) == 2);
    }

    SECTION("invalid config content is a config error") {
        const auto cfgpath = dir / "bad.toml";
        std::ofstream(cfgpath) << "[experiment]\nmodel = nope\n";
        CHECK(run_cli({"run", cfgpath.string()}) == 2);
    }

    SECTION("run + plot round trip") {
        const auto cfgpath = dir / "smoke.toml";
        std::ofstream(cfgpath) << kSmokeConfig;
        const auto out = dir / "out";
        REQUIRE(run_cli({"run", cfgpath.string(), "--out", out.string()}) == 0);
        REQUIRE(fs::exists(out / "records.csv"));
        CHECK(run_cli({"plot", (out / "records.csv").string(), "lineplot:error-vs-n"}) == 0);
        CHECK(fs::exists(out / "lineplot_error-vs-n.svg"));
        CHECK(run_cli({"plot", (out / "records.csv").string(), "boxplot:group=mode+n,value=l2_error"}) == 0);
        CHECK(run_cli({"plot", (out / "records.csv").string(), "lineplot:y=bogus"}) == 2);
        CHECK(run_cli({"plot", (out / "missing.csv").string(), "lineplot:error-vs-n"}) == 2);
    }

    SECTION("built-in verifications all pass") {
        CHECK(run_cli({"check"}) == 0);
    }

    SECTION("seed override changes the records") {
        const auto cfgpath = dir / "smoke.toml";
        std::ofstream(cfgpath) << kSmokeConfig;
        const auto out1 = dir / "s1";
        const auto out2 = dir / "s2";
        REQUIRE(run_cli({"run", cfgpath.string(), "--out", out1.string()}) == 0);
        setenv("M3VB_SEED", "777", 1);
        REQUIRE(run_cli({"run", cfgpath.string(), "--out", out2.string()}) == 0);
        unsetenv("M3VB_SEED");
        CHECK(drop_wall_time(slurp(out1 / "records.csv")) != drop_wall_time(slurp(out2 / "records.csv")));
    }
    fs::remove_all(dir);
}
