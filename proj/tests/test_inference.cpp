#include <catch_amalgamated.hpp>

#include <cmath>
#include <thread>
#include <vector>

#include "apq/inference.hpp"
#include "apq/parallel.hpp"
#include "apq/rng.hpp"

using namespace apq;
using Catch::Approx;

namespace {

SeriesData path(const Params& p, Eigen::Index n, std::uint64_t seed, Eigen::Index burnin = 500) {
    return simulate(p, InnovationDist::normal(), n, burnin, seed).series;
}

GqmleFit constant_residual_fit(const Params& p, double c, Eigen::Index n) {
    GqmleFit f;
    f.theta_hat = p;
    f.residuals = Eigen::VectorXd::Constant(n, c);
    return f;
}

unsigned jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

TEST_CASE("gamma_hat on constant residuals", "[gamma]") {
    const Params p{0.1, 0.2, 0.3, 0.5, 2.0};
    const GqmleFit f = constant_residual_fit(p, -1.3, 500);
    const GammaEstimate g = gamma_hat(f);
    CHECK(g.gamma == Approx(std::log(0.3 * 1.69 + 0.5)).epsilon(1e-15));
    CHECK(g.sigma_u == 0.0);
    CHECK_THROWS_AS(stationarity_test(f, StationarityHypothesis::stationary), NumericalError);
}

TEST_CASE("gamma_hat with no ARCH terms is log beta exactly", "[gamma]") {
    GqmleFit f;
    f.theta_hat = Params{0.1, 0.0, 0.0, 0.9, 2.0};
    Rng rng(4);
    f.residuals.resize(777);
    for (auto& e : f.residuals) e = rng.normal();
    CHECK(gamma_hat(f).gamma == std::log(0.9));
}

TEST_CASE("zero residual with beta = 0 is refused with its index", "[gamma]") {
    GqmleFit f = constant_residual_fit(Params{0.1, 0.2, 0.3, 0.0, 2.0}, 0.5, 10);
    f.residuals(6) = 0.0;
    try {
        gamma_hat(f);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.index() == 6);
    }
}

TEST_CASE("normal p-values and report consistency", "[tests]") {
    CHECK(normal_p_value(1.6449, NullDist::normal_upper) == Approx(0.05).margin(1e-5));
    CHECK(normal_p_value(-1.6449, NullDist::normal_lower) == Approx(0.05).margin(1e-5));
    CHECK(normal_p_value(1.959964, NullDist::normal_two_sided) == Approx(0.05).margin(1e-6));
    CHECK(normal_p_value(0.0, NullDist::normal_two_sided) == 1.0);

    const SeriesData s = path(Params{0.1, 0.05, 0.15, 0.9, 2.0}, 2000, 11);
    const GqmleFit f = fit_gqmle(s, 2.0, 2.0);
    const QuantileFit q = fit_quantile(s, f, 0.1);
    for (const TestReport& rep :
         {stationarity_test(f, StationarityHypothesis::stationary), stationarity_test(f, StationarityHypothesis::nonstationary),
          asymmetry_test_global(f), asymmetry_test_local(f, q)}) {
        CHECK(normal_p_value(rep.statistic, rep.null_dist) == rep.p_value);
        CHECK(rep.reject == (rep.p_value < rep.alpha));
        CHECK(rep.p_value >= 0.0);
        CHECK(rep.p_value <= 1.0);
        CHECK(rep.inputs_digest.size() == 16);
    }
    const TestReport st = stationarity_test(f, StationarityHypothesis::stationary);
    const TestReport nt = stationarity_test(f, StationarityHypothesis::nonstationary);
    CHECK(st.statistic == nt.statistic);
    CHECK(st.p_value + nt.p_value == Approx(1.0).epsilon(1e-14));
    const GammaEstimate g = gamma_hat(f);
    CHECK(st.statistic == Approx(std::sqrt(2000.0) * g.gamma / g.sigma_u).epsilon(1e-14));
}

TEST_CASE("stationarity statistic is scale invariant", "[tests]") {
    const SeriesData s = path(Params{0.1, 0.05, 0.15, 0.9, 2.0}, 2000, 12);
    SeriesData s3 = s;
    s3.values *= 3.0;
    const double t1 = stationarity_test(fit_gqmle(s, 2.0, 2.0), StationarityHypothesis::stationary).statistic;
    const double t3 = stationarity_test(fit_gqmle(s3, 2.0, 2.0), StationarityHypothesis::stationary).statistic;
    CHECK(std::abs(t1 - t3) < 1e-6);
}

TEST_CASE("global asymmetry statistic flips sign under negation", "[tests]") {
    const SeriesData s = path(Params{0.1, 0.05, 0.15, 0.9, 2.0}, 2000, 13);
    SeriesData neg = s;
    neg.values = -s.values;
    const GqmleFit f = fit_gqmle(s, 2.0, 2.0);
    const GqmleFit g = fit_gqmle(neg, 2.0, 2.0);
    CHECK(g.theta_hat.alpha_plus == Approx(f.theta_hat.alpha_minus).margin(1e-5));
    const double a = asymmetry_test_global(f).statistic;
    const double b = asymmetry_test_global(g).statistic;
    CHECK(std::abs(a + b) < 1e-3);
    CHECK(a < 0.0);
}

TEST_CASE("equal alphas give a zero statistic and unit p-value", "[tests]") {
    const SeriesData s = path(Params{0.1, 0.15, 0.15, 0.8, 2.0}, 1500, 14);
    OptimOptions o;
    o.symmetric_alpha = true;
    const GqmleFit f = fit_gqmle(s, 2.0, 2.0, o);
    const TestReport r1 = asymmetry_test_global(f);
    CHECK(r1.statistic == 0.0);
    CHECK(r1.p_value == 1.0);
    CHECK_FALSE(r1.reject);

    const GqmleFit u = fit_gqmle(s, 2.0, 2.0);
    QuantileFit q = fit_quantile(s, u, 0.1);
    q.theta_tau_hat(2) = q.theta_tau_hat(1);
    const TestReport r2 = asymmetry_test_local(u, q);
    CHECK(r2.statistic == 0.0);
    CHECK(r2.p_value == 1.0);
}

TEST_CASE("gamma_tilde at the boundary stays within three standard errors", "[tests][mc]") {
    const Params p{0.1, 0.07224697, 0.15, 0.9, 2.0};
    constexpr int reps = 100;
    std::vector<int> inside(reps, 0);
    parallel_for(reps, jobs(), [&](std::size_t i) {
        const SeriesData s = path(p, 4000, derive_seed(71, i), 0);
        const GammaEstimate g = gamma_hat(fit_gqmle(s, 1.0, 2.0));
        inside[i] = std::abs(g.gamma) < 3.0 * g.sigma_u / std::sqrt(4000.0);
    });
    int count = 0;
    for (int v : inside) count += v;
    CHECK(count >= 80);
}

TEST_CASE("stationary-regime variance of gamma_tilde matches its replication spread", "[tests][mc]") {
    const Params p{0.1, 0.05, 0.15, 0.9, 2.0};
    const double gamma0 = -0.0104;
    constexpr int reps = 300;
    std::vector<double> z(reps), sd(reps);
    parallel_for(reps, jobs(), [&](std::size_t i) {
        const SeriesData s = path(p, 2000, derive_seed(72, i));
        const GqmleFit f = fit_gqmle(s, 2.0, 2.0);
        z[i] = std::sqrt(2000.0) * (gamma_hat(f).gamma - gamma0);
        sd[i] = std::sqrt(gamma_variance(f).sigma2_stationary);
    });
    double m = 0.0, m2 = 0.0, mean_sd = 0.0;
    for (int i = 0; i < reps; ++i) {
        m += z[i];
        m2 += z[i] * z[i];
        mean_sd += sd[i];
    }
    m /= reps;
    const double esd = std::sqrt((m2 / reps - m * m) * reps / (reps - 1.0));
    mean_sd /= reps;
    INFO("replication SD " << esd << ", mean plug-in SD " << mean_sd);
    CHECK(std::abs(esd - mean_sd) / esd < 0.2);
}

TEST_CASE("stationarity test power far inside the explosive region", "[tests][mc]") {
    const Params p{0.1, 0.11, 0.15, 0.9, 2.0};
    constexpr int reps = 100;
    std::vector<int> rej(reps, 0);
    parallel_for(reps, jobs(), [&](std::size_t i) {
        const SeriesData s = path(p, 2000, derive_seed(73, i), 0);
        rej[i] = stationarity_test(fit_gqmle(s, 2.0, 2.0), StationarityHypothesis::stationary).reject;
    });
    int count = 0;
    for (int v : rej) count += v;
    CHECK(count >= 95);
}
