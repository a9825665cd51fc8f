#include <catch_amalgamated.hpp>

#include <cmath>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "apq/parallel.hpp"
#include "apq/risk.hpp"
#include "apq/rng.hpp"
#include "oracles.hpp"

using namespace apq;
using Catch::Approx;

namespace {

unsigned jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

const Params kDesign{0.1, 0.05, 0.15, 0.9, 2.0};

SimulatedPath sim(Eigen::Index n, std::uint64_t seed) { return simulate(kDesign, InnovationDist::normal(), n, 500, seed); }

long count(const std::vector<int>& v) {
    long c = 0;
    for (int x : v) c += x;
    return c;
}

using oracle::dq_statistic;

}  // namespace

TEST_CASE("CC test on an alternating flag sequence", "[cc]") {
    std::vector<int> flags;
    for (int i = 0; i < 24; ++i) flags.push_back(i % 2);
    const CcResult cc = cc_test(flags, 0.5);
    CHECK(cc.lr_uc == Approx(0.0).margin(1e-14));
    CHECK(cc.transitions[0] == 0);
    CHECK(cc.transitions[1] == 12);
    CHECK(cc.transitions[2] == 11);
    CHECK(cc.transitions[3] == 0);
    // Under independence p = 12/23 of transitions land on 1; the Markov fit is exact.
    const double expected = -2.0 * (11.0 * std::log(11.0 / 23.0) + 12.0 * std::log(12.0 / 23.0));
    CHECK(cc.lr_ind == Approx(expected).epsilon(1e-13));
    CHECK(cc.lr_cc == cc.lr_uc + cc.lr_ind);
    CHECK(cc.dof == 2);
    CHECK_FALSE(cc.degenerate);
}

TEST_CASE("CC test with no exceedances", "[cc]") {
    const CcResult cc = cc_test(std::vector<int>(100, 0), 0.05);
    CHECK(cc.lr_uc == Approx(-200.0 * std::log(0.95)).epsilon(1e-14));
    CHECK(cc.lr_uc == Approx(10.26).margin(0.005));
    CHECK(cc.p_value == Approx(0.0014).margin(1e-4));
    CHECK(cc.degenerate);
    CHECK(cc.dof == 1);

    const CcResult all = cc_test(std::vector<int>(50, 1), 0.05);
    CHECK(all.degenerate);
    CHECK(all.lr_uc == Approx(-100.0 * std::log(0.05)).epsilon(1e-14));
}

TEST_CASE("CC test with no 1-1 transitions drops the impossible term", "[cc]") {
    std::vector<int> flags(40, 0);
    flags[5] = flags[17] = flags[30] = 1;
    const CcResult cc = cc_test(flags, 0.05);
    CHECK(cc.transitions[3] == 0);
    CHECK(std::isfinite(cc.lr_ind));
    CHECK(cc.lr_ind >= 0.0);
    CHECK(std::isfinite(cc.p_value));
}

TEST_CASE("CC input checks", "[cc]") {
    CHECK_THROWS_AS(cc_test(std::vector<int>(19, 0), 0.05), InputError);
    CHECK_THROWS_AS(cc_test(std::vector<int>(30, 2), 0.05), InputError);
    CHECK_THROWS_AS(cc_test(std::vector<int>(30, 0), 1.0), InputError);
}

TEST_CASE("DQ statistic matches a dense regression oracle", "[dq]") {
    Rng rng(91);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd y(30), var(30);
        for (Eigen::Index t = 0; t < 30; ++t) {
            var(t) = -1.0 - 0.5 * rng.uniform();
            y(t) = rng.normal() * 0.8;
        }
        const DqResult dq = dq_test(y, var, 0.1);
        const double oracle = dq_statistic(y, var, 0.1);
        INFO("rep " << rep);
        if (dq.pseudo_inverse) continue;
        CHECK(std::abs(dq.statistic - oracle) <= 1e-10 * std::max(1.0, oracle));
        CHECK(dq.dof == 6);
    }
}

TEST_CASE("DQ statistic is zero when hits are orthogonal to the design", "[dq]") {
    // Exceedance share tau = 0.5 with a VaR column built orthogonal to Hit.
    Eigen::MatrixXd X(12, 2);
    Eigen::VectorXd hit(12);
    for (Eigen::Index i = 0; i < 12; ++i) {
        hit(i) = i % 2 == 0 ? 0.5 : -0.5;
        X(i, 0) = 1.0;
        X(i, 1) = (i / 2) % 2 == 0 ? 1.0 : -1.0;
    }
    const DqResult dq = dq_quadratic_form(X, hit, 0.5);
    CHECK(dq.statistic == Approx(0.0).margin(1e-14));
    CHECK(dq.p_value == Approx(1.0).margin(1e-12));
}

TEST_CASE("DQ quadratic form is invariant to a consistent row permutation", "[dq]") {
    Rng rng(92);
    Eigen::MatrixXd X(60, 6);
    Eigen::VectorXd hit(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
        hit(i) = (rng.uniform() < 0.05 ? 1.0 : 0.0) - 0.05;
        X(i, 0) = 1.0;
        for (int j = 1; j < 6; ++j) X(i, j) = rng.normal();
    }
    std::vector<Eigen::Index> perm(60);
    for (Eigen::Index i = 0; i < 60; ++i) perm[static_cast<std::size_t>(i)] = (i * 37) % 60;
    Eigen::MatrixXd Xp(60, 6);
    Eigen::VectorXd hp(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
        Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
        hp(i) = hit(perm[static_cast<std::size_t>(i)]);
    }
    const double a = dq_quadratic_form(X, hit, 0.05).statistic;
    const double b = dq_quadratic_form(Xp, hp, 0.05).statistic;
    CHECK(std::abs(a - b) <= 1e-10 * a);
}

TEST_CASE("DQ with a collinear design uses a pseudo-inverse", "[dq]") {
    Eigen::VectorXd y = Eigen::VectorXd::Constant(40, 1.0);
    Eigen::VectorXd var = Eigen::VectorXd::Constant(40, -1.0);
    y(7) = -2.0;
    const DqResult dq = dq_test(y, var, 0.05);
    CHECK(dq.pseudo_inverse);
    CHECK(dq.dof < 6);
    CHECK(std::isfinite(dq.p_value));
    CHECK_THROWS_AS(dq_test(y.head(13), var.head(13), 0.05), InputError);
}

TEST_CASE("upper-tail evaluation mirrors the lower tail of the negated series", "[dq][cc]") {
    Rng rng(93);
    Eigen::VectorXd y(300), var(300);
    for (Eigen::Index t = 0; t < 300; ++t) {
        y(t) = rng.normal();
        var(t) = 1.6 + 0.1 * rng.normal();
    }
    const DqResult up = dq_test(y, var, 0.05, Side::upper);
    const DqResult low = dq_test(-y, -var, 0.05, Side::lower);
    CHECK(up.statistic == low.statistic);
    CHECK(up.p_value == low.p_value);
    CHECK(exceedances(y, var, Side::upper) == exceedances(-y, -var, Side::lower));
}

TEST_CASE("coverage error on fixed runs", "[coverage]") {
    ForecastRun run;
    run.tau = 0.05;
    run.var_series = Eigen::VectorXd::Zero(100);
    run.realized = Eigen::VectorXd::Ones(100);
    for (int i = 0; i < 5; ++i) run.realized(i * 20) = -1.0;
    CHECK(coverage_error(run) == 0.0);

    run.tau = 0.01;
    run.var_series = Eigen::VectorXd::Zero(200);
    run.realized = Eigen::VectorXd::Ones(200);
    CHECK(coverage_error(run) == -0.01);

    run.realized(3) = 0.0;  // ties are not exceedances
    CHECK(coverage_error(run) == -0.01);

    ForecastRun empty;
    CHECK_THROWS_AS(coverage_error(empty), InputError);
}

TEST_CASE("backtest report fields are consistent", "[coverage]") {
    Rng rng(94);
    ForecastRun run;
    run.tau = 0.05;
    run.var_series = Eigen::VectorXd::Constant(400, -1.6448536269514722);
    run.realized.resize(400);
    for (auto& x : run.realized) x = rng.normal();
    const BacktestReport rep = backtest(run);
    long recount = 0;
    for (Eigen::Index t = 0; t < 400; ++t) recount += run.realized(t) < run.var_series(t);
    CHECK(rep.n_exceed == recount);
    CHECK(rep.coverage_error == static_cast<double>(recount) / 400.0 - 0.05);
    CHECK(rep.min_pvalue == std::min(rep.cc_pvalue, rep.dq_pvalue));
    CHECK(rep.good == (rep.min_pvalue > 0.05));
}

namespace {

struct Sizes {
    double cc = 0.0;
    double dq = 0.0;
};

Sizes bernoulli_sizes(double tau, std::uint64_t master) {
    constexpr int reps = 10000;
    constexpr Eigen::Index len = 500;
    std::vector<int> cc_rej(reps, 0), dq_rej(reps, 0);
    parallel_for(reps, jobs(), [&](std::size_t i) {
        Rng rng(derive_seed(master, i));
        Eigen::VectorXd y(len), var(len);
        for (Eigen::Index t = 0; t < len; ++t) {
            var(t) = rng.normal();
            y(t) = rng.uniform() < tau ? var(t) - 1.0 : var(t) + 1.0;
        }
        cc_rej[i] = cc_test(exceedances(y, var, Side::lower), tau).p_value < 0.05;
        dq_rej[i] = dq_test(y, var, tau).p_value < 0.05;
    });
    return {static_cast<double>(count(cc_rej)) / reps, static_cast<double>(count(dq_rej)) / reps};
}

}  // namespace

TEST_CASE("CC and DQ size on i.i.d. Bernoulli hits at tau = 0.05", "[size][mc]") {
    const Sizes s = bernoulli_sizes(0.05, 96);
    INFO("CC size " << s.cc << " DQ size " << s.dq);
    CHECK(s.cc >= 0.035);
    CHECK(s.cc <= 0.065);
    CHECK(s.dq >= 0.03);
    CHECK(s.dq <= 0.07);
}

// About five hits per stream: a pair of hits within four lags makes the
// statistic close to (1 - tau) / tau, so chi-square calibration fails.
TEST_CASE("CC and DQ size on i.i.d. Bernoulli hits at tau = 0.01", "[size][mc][!shouldfail]") {
    const Sizes s = bernoulli_sizes(0.01, 95);
    INFO("CC size " << s.cc << " DQ size " << s.dq);
    CHECK(s.cc >= 0.03);
    CHECK(s.cc <= 0.07);
    CHECK(s.dq >= 0.03);
    CHECK(s.dq <= 0.07);
}

TEST_CASE("forecasts are causal", "[forecast]") {
    const SimulatedPath p = sim(320, 97);
    ForecastConfig cfg;
    cfg.start_index = 300;
    cfg.jobs = jobs();
    const ForecastRun a = expanding_window_forecast(p.series, cfg);
    SeriesData changed = p.series;
    changed.values(310) = 25.0;
    changed.values(319) = -40.0;
    const ForecastRun b = expanding_window_forecast(changed, cfg);
    REQUIRE(a.n_out() == 20);
    REQUIRE(b.n_out() == 20);
    for (Eigen::Index i = 0; i <= 10; ++i) CHECK(a.var_series(i) == b.var_series(i));
    CHECK(a.var_series(11) != b.var_series(11));
    CHECK(a.targets.front() == 300);
    CHECK(a.targets.back() == 319);
}

TEST_CASE("forecast runs do not depend on the job count", "[forecast]") {
    const SimulatedPath p = sim(340, 98);
    ForecastConfig cfg;
    cfg.start_index = 300;
    cfg.refit_every = 3;
    cfg.jobs = 1;
    const ForecastRun a = expanding_window_forecast(p.series, cfg);
    cfg.jobs = jobs();
    const ForecastRun b = expanding_window_forecast(p.series, cfg);
    CHECK(a.var_series == b.var_series);
    CHECK(a.model_config == b.model_config);
}

TEST_CASE("upper-side forecasts sit above lower-side forecasts", "[forecast]") {
    const SimulatedPath p = sim(330, 99);
    ForecastConfig cfg;
    cfg.start_index = 300;
    cfg.jobs = jobs();
    const ForecastRun low = expanding_window_forecast(p.series, cfg);
    cfg.side = Side::upper;
    const ForecastRun up = expanding_window_forecast(p.series, cfg);
    CHECK(up.level() == 0.95);
    CHECK((up.var_series.array() > low.var_series.array()).all());
}

TEST_CASE("forecast configuration checks", "[forecast]") {
    const SimulatedPath p = sim(400, 100);
    ForecastConfig cfg;
    cfg.start_index = 200;
    CHECK_THROWS_AS(expanding_window_forecast(p.series, cfg), InputError);
    cfg.start_index = 400;
    CHECK_THROWS_AS(expanding_window_forecast(p.series, cfg), InputError);
    cfg.start_index = 300;
    cfg.refit_every = 0;
    CHECK_THROWS_AS(expanding_window_forecast(p.series, cfg), InputError);
    CHECK(parse_side("upper") == Side::upper);
    CHECK_THROWS_AS(parse_side("middle"), InputError);
}

TEST_CASE("pipeline exceedance rate tracks the oracle", "[forecast][mc]") {
    constexpr Eigen::Index n = 3000;
    const double tau = 0.05;
    const SimulatedPath p = sim(n, 101);
    ForecastConfig cfg;
    cfg.tau = tau;
    cfg.start_fraction = 0.5;
    cfg.refit_every = 5;
    cfg.jobs = jobs();
    const ForecastRun run = expanding_window_forecast(p.series, cfg);
    REQUIRE(run.gaps.empty());
    const double n_out = static_cast<double>(run.n_out());
    const double band = 3.0 * std::sqrt(tau * (1.0 - tau) / n_out);

    const double q = InnovationDist::normal().quantile(tau);
    long oracle_hits = 0;
    for (Eigen::Index t : run.targets) oracle_hits += p.series.values(t) < std::sqrt(p.h(t)) * q;
    const double oracle_rate = static_cast<double>(oracle_hits) / n_out;
    const double pipeline_rate = coverage_error(run) + tau;
    INFO("oracle " << oracle_rate << " pipeline " << pipeline_rate << " band " << band);
    CHECK(std::abs(oracle_rate - tau) <= band);
    CHECK(std::abs(pipeline_rate - tau) <= 2.0 * band);

    cfg.refit_every = 20;
    const ForecastRun sparse = expanding_window_forecast(p.series, cfg);
    cfg.refit_every = 1;
    const ForecastRun daily = expanding_window_forecast(p.series, cfg);
    const double diff = std::abs(coverage_error(sparse) - coverage_error(daily));
    INFO("refit 1 vs 20 exceedance difference " << diff);
    CHECK(sparse.var_series != daily.var_series);
    CHECK(diff <= 0.01);
}
