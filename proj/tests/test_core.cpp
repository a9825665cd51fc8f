#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "apq/core.hpp"

using namespace apq;
using Catch::Approx;

namespace {

Eigen::VectorXd random_series(std::uint64_t seed, Eigen::Index n, double scale = 1.0) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

double t_density(double x, double nu) {
    const double s = std::sqrt((nu - 2.0) / nu);
    const double z = x / s;
    const double logc = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI);
    return std::exp(logc - 0.5 * (nu + 1.0) * std::log1p(z * z / nu)) / s;
}

double normal_density(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

// Composite Simpson rule on [-L, 0] and [0, L] so the kink of a0 at zero is a node.
template <typename F>
double integrate_symmetric(F&& f, double L, int half_panels) {
    auto simpson = [&](double a, double b) {
        const double h = (b - a) / half_panels;
        double s = f(a) + f(b);
        for (int i = 1; i < half_panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
        return s * h / 3.0;
    };
    return simpson(-L, 0.0) + simpson(0.0, L);
}

}  // namespace

TEST_CASE("engine and seed derivation match published test values", "[rng]") {
    std::mt19937_64 engine;
    engine.discard(9999);
    REQUIRE(engine() == 9981545732273789042ULL);
    REQUIRE(splitmix64(0) == 0xE220A8397B1DCDAFULL);
    REQUIRE(derive_seed(7, 3) == derive_seed(7, 3));
    REQUIRE(derive_seed(7, 3) != derive_seed(7, 4));
}

TEST_CASE("uniforms lie in range", "[rng]") {
    Rng rng(1);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        const double v = rng.uniform_open();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("innovations have unit second moment", "[dist]") {
    for (const auto& dist : {InnovationDist::normal(), InnovationDist::student_t(5.0)}) {
        Rng rng(20240611);
        double acc = 0.0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) {
            const double e = dist.draw(rng);
            acc += e * e;
        }
        INFO(dist.name());
        REQUIRE(std::abs(acc / n - 1.0) < 0.01);
    }
}

TEST_CASE("heavy-tailed innovations match closed-form first moment and quantiles", "[dist]") {
    const auto dist = InnovationDist::student_t(3.0);
    Rng rng(20240611);
    const int n = 1000000;
    double m = 0.0, m2 = 0.0;
    int below = 0;
    const double q = dist.quantile(0.05);
    for (int i = 0; i < n; ++i) {
        const double e = dist.draw(rng);
        m += std::abs(e);
        m2 += e * e;
        below += e < q;
    }
    m /= n;
    const double se = std::sqrt((m2 / n - m * m) / n);
    REQUIRE(std::abs(m - dist.abs_moment(1.0)) < 4.0 * se);
    REQUIRE(std::abs(below / double(n) - 0.05) < 4.0 * std::sqrt(0.05 * 0.95 / n));
}

TEST_CASE("standardized t requires nu > 2", "[dist]") {
    REQUIRE_THROWS_AS(InnovationDist::student_t(2.0), InputError);
    REQUIRE(InnovationDist::parse("st:5") == InnovationDist::student_t(5.0));
    REQUIRE(InnovationDist::parse("normal") == InnovationDist::normal());
    REQUIRE_THROWS_AS(InnovationDist::parse("cauchy"), InputError);
}

TEST_CASE("closed-form absolute moments", "[dist]") {
    REQUIRE(InnovationDist::normal().abs_moment(1.0) == Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-14));
    REQUIRE(InnovationDist::normal().abs_moment(2.0) == Approx(1.0).epsilon(1e-14));
    REQUIRE(InnovationDist::normal().abs_moment(4.0) == Approx(3.0).epsilon(1e-13));
    REQUIRE(InnovationDist::student_t(5.0).abs_moment(2.0) == Approx(1.0).epsilon(1e-13));
    REQUIRE(InnovationDist::student_t(5.0).abs_moment(4.0) == Approx(9.0).epsilon(1e-12));
    REQUIRE_THROWS_AS(InnovationDist::student_t(3.0).abs_moment(3.0), InputError);
    const auto st5 = InnovationDist::student_t(5.0);
    const double quad = integrate_symmetric([](double x) { return std::abs(x) * t_density(x, 5.0); }, 400.0, 400000);
    REQUIRE(st5.abs_moment(1.0) == Approx(quad).epsilon(1e-6));
}

TEST_CASE("transform examples", "[transform]") {
    REQUIRE(transform(-2.0, 2.0) == -4.0);
    REQUIRE(transform(0.7, 1.0) == 0.7);
    REQUIRE(inverse_transform(transform(-8.0, 3.0), 3.0) == Approx(-8.0).epsilon(1e-15));
    REQUIRE(inverse_transform(-4.0, 2.0) == -2.0);
    REQUIRE(inverse_transform(0.0, 0.37) == 0.0);
    REQUIRE(inverse_transform(1.7, 2.0) == Approx(1.30384).margin(5e-6));
}

TEST_CASE("transform and inverse are mutually inverse", "[transform]") {
    for (double delta : {0.5, 1.0, 2.0, 3.0}) {
        for (int k = -80; k <= 80; ++k) {
            const double mag = std::pow(10.0, k / 10.0);
            for (double x : {mag, -mag, 1.2345 * mag, -0.987 * mag}) {
                if (std::abs(x) < 1e-8 || std::abs(x) > 1e8) continue;
                const double y = inverse_transform(transform(x, delta), delta);
                REQUIRE(std::abs(y - x) <= 8e-16 * std::abs(x) * std::max(1.0, delta));
                const double z = transform(inverse_transform(x, delta), delta);
                REQUIRE(std::abs(z - x) <= 8e-16 * std::abs(x) * std::max(1.0, delta));
            }
        }
    }
}

TEST_CASE("transform is odd and increasing", "[transform]") {
    double prev = -1e300;
    for (int i = -1000; i <= 1000; ++i) {
        const double x = i / 97.0;
        const double y = transform(x, 1.7);
        REQUIRE(transform(-x, 1.7) == -y);
        REQUIRE(y > prev);
        prev = y;
    }
}

TEST_CASE("volatility recursion matches hand computation", "[volatility]") {
    const Params p{0.1, 0.2, 0.3, 0.5, 2.0};
    Eigen::VectorXd eps(2);
    eps << -2.0, 0.4;
    const auto path = volatility_path(SeriesData(eps), p, InitRule::fixed(1.0, 1.0));
    REQUIRE(path.sigma_delta(0) == Approx(0.8).epsilon(1e-15));
    REQUIRE(path.sigma_delta(1) == Approx(1.7).epsilon(1e-15));
    REQUIRE(path.init_sigma_delta == 1.0);
    REQUIRE(path.init_epsilon == 1.0);
    REQUIRE(path.grad(0, 0) == 1.0);
    REQUIRE(path.grad(0, 1) == 1.0);
    REQUIRE(path.grad(0, 2) == 0.0);
    REQUIRE(path.grad(0, 3) == 1.0);
    REQUIRE(path.grad(1, 0) == Approx(1.5));
    REQUIRE(path.grad(1, 1) == Approx(0.5));
    REQUIRE(path.grad(1, 2) == Approx(4.0));
    REQUIRE(path.grad(1, 3) == Approx(0.8 + 0.5));
}

TEST_CASE("beta = 0 removes memory", "[volatility]") {
    const Params p{0.3, 0.2, 0.6, 0.0, 1.5};
    const Eigen::VectorXd eps = random_series(5, 40);
    const auto path = volatility_path(SeriesData(eps), p, InitRule::fixed(7.0, 0.25));
    for (Eigen::Index t = 1; t < eps.size(); ++t) {
        const double e = eps(t - 1);
        const double expect = p.omega + p.alpha_plus * positive_power(e, p.delta) + p.alpha_minus * negative_power(e, p.delta);
        REQUIRE(path.sigma_delta(t) == Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("gradient path matches central differences", "[volatility]") {
    for (double beta : {0.0, 0.5, 0.99}) {
        const Eigen::VectorXd eps = random_series(11 + static_cast<std::uint64_t>(beta * 100), 50);
        const Params p{0.2, 0.07, 0.13, beta, 1.3};
        const auto init = initial_state(SeriesData(eps), p, InitRule::fixed(0.9, -0.3));
        const auto path = volatility_path<double>(eps, p, init);
        double worst = 0.0;
        for (int j = 0; j < 4; ++j) {
            Vector4<double> up = p.theta(), dn = p.theta();
            up(j) += 1e-6;
            dn(j) -= 1e-6;
            const auto pu = volatility_path<double>(eps, Params::from_theta(up, p.delta), init);
            const auto pd = volatility_path<double>(eps, Params::from_theta(dn, p.delta), init);
            for (Eigen::Index t = 0; t < eps.size(); ++t) {
                const double fd = (pu.sigma_delta(t) - pd.sigma_delta(t)) / 2e-6;
                const double an = path.grad(t, j);
                worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-12));
            }
        }
        INFO("beta = " << beta);
        REQUIRE(worst < 1e-6);
    }
}

TEST_CASE("path positivity and gradient signs", "[volatility]") {
    const Eigen::VectorXd eps = random_series(3, 500, 2.0);
    const Params p{0.05, 0.1, 0.2, 0.85, 2.0};
    const auto path = volatility_path(SeriesData(eps), p);
    for (Eigen::Index t = 0; t < eps.size(); ++t) {
        REQUIRE(path.sigma_delta(t) >= p.omega);
        REQUIRE(path.grad(t, 0) >= 1.0);
        for (int j = 1; j < 4; ++j) REQUIRE(path.grad(t, j) >= 0.0);
    }
}

TEST_CASE("streaming equals batch bit-exactly", "[volatility]") {
    const Eigen::VectorXd eps = random_series(17, 300);
    const Params p{0.1, 0.05, 0.15, 0.9, 1.0};
    const auto init = initial_state(SeriesData(eps), p, InitRule::sample_mean());
    const auto full = volatility_path<double>(eps, p, init);
    const auto first = volatility_path<double>(eps.head(123), p, init);
    const auto second = volatility_path<double>(eps.tail(177), p, first.final_state);
    for (Eigen::Index t = 0; t < 123; ++t) REQUIRE(first.sigma_delta(t) == full.sigma_delta(t));
    for (Eigen::Index t = 0; t < 177; ++t) {
        REQUIRE(second.sigma_delta(t) == full.sigma_delta(123 + t));
        for (int j = 0; j < 4; ++j) REQUIRE(second.grad(t, j) == full.grad(123 + t, j));
    }
}

TEST_CASE("recursion is linear in (omega, alphas, sigma_0)", "[volatility]") {
    const Eigen::VectorXd eps = random_series(23, 200);
    const Params p{0.1, 0.05, 0.15, 0.9, 2.0};
    for (double c : {2.0, 3.0}) {
        const Params q{c * p.omega, c * p.alpha_plus, c * p.alpha_minus, p.beta, p.delta};
        const auto a = volatility_path(SeriesData(eps), p, InitRule::fixed(0.8, 0.0));
        const auto b = volatility_path(SeriesData(eps), q, InitRule::fixed(c * 0.8, 0.0));
        for (Eigen::Index t = 0; t < eps.size(); ++t) {
            if (c == 2.0) REQUIRE(b.sigma_delta(t) == 2.0 * a.sigma_delta(t));
            else REQUIRE(b.sigma_delta(t) == Approx(c * a.sigma_delta(t)).epsilon(1e-13));
        }
    }
}

TEST_CASE("non-finite input is rejected with its index", "[volatility]") {
    Eigen::VectorXd eps = random_series(1, 10);
    eps(6) = std::nan("");
    try {
        volatility_path<double>(eps, Params{0.1, 0.1, 0.1, 0.5, 2.0}, VolatilityState<double>{1.0, 0.0});
        FAIL("expected an exception");
    } catch (const InputError& e) {
        REQUIRE(e.index() == 6);
    }
}

TEST_CASE("sample-mean initial value", "[volatility]") {
    Eigen::VectorXd eps(3);
    eps << 1.0, -2.0, 3.0;
    const auto s = initial_state(SeriesData(eps), Params{0.1, 0.1, 0.1, 0.5, 2.0}, InitRule::sample_mean());
    REQUIRE(s.sigma_delta == Approx(14.0 / 3.0));
    REQUIRE(s.epsilon == 0.0);
    const auto u = initial_state(SeriesData(eps), Params{0.1, 0.1, 0.1, 0.995, 2.0}, InitRule::unconditional());
    REQUIRE(u.sigma_delta == Approx(10.0));
}

TEST_CASE("degenerate volatility reproduces raw draws", "[simulate]") {
    const auto dist = InnovationDist::student_t(5.0);
    const auto sim = simulate(Params{1.0, 0.0, 0.0, 0.0, 2.0}, dist, 200, 0, 99);
    Rng rng(99);
    for (Eigen::Index t = 0; t < 200; ++t) {
        REQUIRE(sim.h(t) == 1.0);
        REQUIRE(sim.series.values(t) == dist.draw(rng));
    }
}

TEST_CASE("simulation is deterministic and filtering recovers h exactly", "[simulate]") {
    const Params p{0.1, 0.05, 0.15, 0.9, 2.0};
    const auto a = simulate(p, InnovationDist::normal(), 2000, 500, 42);
    const auto b = simulate(p, InnovationDist::normal(), 2000, 500, 42);
    REQUIRE(a.series.values == b.series.values);
    const auto path = volatility_path(a.series, p, InitRule::fixed(a.init_h, a.init_epsilon));
    for (Eigen::Index t = 0; t < 2000; ++t) REQUIRE(path.sigma_delta(t) == a.h(t));

    const Params q{0.1, 0.2, 0.15, 0.9, 1.0};
    const auto c = simulate(q, InnovationDist::student_t(5.0), 1000, 0, 7);
    const auto qpath = volatility_path(c.series, q, InitRule::fixed(c.init_h, c.init_epsilon));
    for (Eigen::Index t = 0; t < 1000; ++t) REQUIRE(qpath.sigma_delta(t) == c.h(t));
}

TEST_CASE("explosive paths switch to log space", "[simulate]") {
    const Params p{0.1, 0.6, 0.6, 0.9, 2.0};
    const auto sim = simulate(p, InnovationDist::normal(), 3000, 0, 5);
    REQUIRE(sim.log_space);
    for (Eigen::Index t = 0; t < sim.log_h.size(); ++t) REQUIRE(std::isfinite(sim.log_h(t)));
    REQUIRE_THROWS_AS(simulate(p, InnovationDist::normal(), 30000, 0, 5), NumericalError);
}

TEST_CASE("simulated path has the Lyapunov exponent of its design", "[simulate]") {
    const Params p{0.1, 0.05, 0.15, 0.9, 2.0};
    const auto sim = simulate(p, InnovationDist::normal(), 400000, 500, 2024);
    const Eigen::Index n = sim.eta.size();
    double m = 0.0, m2 = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double l = std::log(a0(p, sim.eta(t)));
        m += l;
        m2 += l * l;
    }
    m /= n;
    const double se = std::sqrt((m2 / n - m * m) / n);
    REQUIRE(std::abs(m - (-0.0104)) < 3.0 * se + 5e-5);
}

TEST_CASE("Lyapunov exponent of a constant a0", "[lyapunov]") {
    const auto est = lyapunov_mc(Params{1.0, 0.0, 0.0, 0.9, 2.0}, InnovationDist::normal(), 10000, 1);
    REQUIRE(est.gamma == std::log(0.9));
    REQUIRE(est.std_error == 0.0);
    REQUIRE_THROWS_AS(lyapunov_mc(Params{1.0, 0.0, 0.0, 0.0, 2.0}, InnovationDist::normal(), 10000, 1), InputError);
    REQUIRE_THROWS_AS(lyapunov_mc(Params{1.0, 0.1, 0.0, 0.0, 2.0}, InnovationDist::normal(), 10000, 1), NumericalError);
}

TEST_CASE("Lyapunov estimate agrees with quadrature", "[lyapunov]") {
    struct Case {
        Params p;
        InnovationDist dist;
    };
    const Case cases[] = {
        {{1.0, 0.2, 0.15, 0.9, 1.0}, InnovationDist::student_t(5.0)},
        {{1.0, 0.05, 0.15, 0.9, 2.0}, InnovationDist::normal()},
        {{1.0, 0.2, 0.15, 0.9, 2.0}, InnovationDist::student_t(3.0)},
    };
    for (const auto& c : cases) {
        const auto est = lyapunov_mc(c.p, c.dist, 2000000, 77);
        const double nu = c.dist.nu();
        const bool normal = c.dist.kind() == InnovationDist::Kind::normal;
        const double quad = integrate_symmetric(
            [&](double x) { return std::log(a0(c.p, x)) * (normal ? normal_density(x) : t_density(x, nu)); }, 2000.0,
            2000000);
        INFO(c.dist.name() << " delta " << c.p.delta << " mc " << est.gamma << " quad " << quad);
        REQUIRE(std::abs(est.gamma - quad) < 4.0 * est.std_error);
    }
}

TEST_CASE("Lyapunov exponent is monotone in each coefficient", "[lyapunov]") {
    const auto draws = transformed_draws(InnovationDist::normal(), 2.0, 200000, 3);
    const Params base{1.0, 0.05, 0.15, 0.9, 2.0};
    const double g0 = lyapunov_mc(base, draws).gamma;
    for (int j = 1; j < 4; ++j) {
        Vector4<double> t = base.theta();
        t(j) += 0.01;
        REQUIRE(lyapunov_mc(Params::from_theta(t, 2.0), draws).gamma > g0);
    }
}

TEST_CASE("draw blocks do not depend on the worker count", "[lyapunov]") {
    const auto a = transformed_draws(InnovationDist::student_t(5.0), 1.0, 300000, 11, 1);
    const auto b = transformed_draws(InnovationDist::student_t(5.0), 1.0, 300000, 11, 4);
    REQUIRE(a == b);
}

TEST_CASE("zero-gamma root for the normal delta=2 design", "[lyapunov]") {
    const auto root = alpha_plus_for_zero_gamma(0.15, 0.9, 2.0, InnovationDist::normal(), 2000000, 8);
    REQUIRE(std::abs(root.alpha_plus - 0.07224697) < 1e-3);
    REQUIRE(std::abs(root.gamma_at_root) < 1e-5);
    const auto est = lyapunov_mc(Params{1.0, 0.07224697, 0.15, 0.9, 2.0}, InnovationDist::normal(), 2000000, 9);
    REQUIRE(std::abs(est.gamma) < 3.0 * est.std_error);
}

TEST_CASE("zero-gamma root without sign change is an error", "[lyapunov]") {
    REQUIRE_THROWS_AS(alpha_plus_for_zero_gamma(2.0, 0.9, 2.0, InnovationDist::normal(), 10000, 8), NumericalError);
}

TEST_CASE("beta boundary", "[boundary]") {
    REQUIRE(beta_boundary(Params{1.0, 0.0, 0.0, 0.83, 2.0}, InnovationDist::normal(), 2.0, 10000, 1) == 0.83);
    const auto draws = transformed_draws(InnovationDist::normal(), 2.0, 2000000, 21);
    const auto root = alpha_plus_for_zero_gamma(0.10, 0.9, 2.0, draws);
    const double b = beta_boundary(Params{1.0, root.alpha_plus, 0.10, 0.9, 2.0}, draws, 2.0);
    REQUIRE(std::abs(b - 0.98524) < 0.002);
    REQUIRE(b > 0.9);
    const double b6 = beta_boundary(Params{1.0, root.alpha_plus, 0.10, 0.9, 2.0}, draws, 6.0);
    REQUIRE(b6 < b);
}

TEST_CASE("printed Lyapunov exponent for delta=1 standardized t5 at alpha+=0.2", "[lyapunov][!shouldfail]") {
    const auto est = lyapunov_mc(Params{1.0, 0.2, 0.15, 0.9, 1.0}, InnovationDist::student_t(5.0), 4000000, 31);
    INFO("estimate " << est.gamma << " +- " << est.std_error);
    REQUIRE(std::abs(est.gamma - 0.0192) < 3.0 * est.std_error);
}
