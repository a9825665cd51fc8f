#include "apq/core.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <limits>
#include <vector>

#include "apq/parallel.hpp"
#include "apq/stats.hpp"

namespace apq {

namespace {

constexpr Eigen::Index kDrawBlock = 1 << 16;
constexpr double kLogSpaceThreshold = 1e250;

}  // namespace

InnovationDist InnovationDist::student_t(double nu) {
    if (!(nu > 2.0) || !std::isfinite(nu))
        throw InputError("standardized Student t needs nu > 2");
    return InnovationDist(Kind::student_t, nu);
}

InnovationDist InnovationDist::parse(const std::string& spec) {
    std::string s;
    for (char c : spec) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "normal" || s == "n" || s == "gaussian") return normal();
    std::string tail;
    if (s.rfind("st:", 0) == 0) tail = s.substr(3);
    else if (s.rfind("st", 0) == 0) tail = s.substr(2);
    else if (s.rfind("t", 0) == 0) tail = s.substr(1);
    else throw InputError("unknown innovation distribution '" + spec + "'");
    std::size_t used = 0;
    double nu = 0.0;
    try {
        nu = std::stod(tail, &used);
    } catch (const std::exception&) {
        throw InputError("cannot parse degrees of freedom in '" + spec + "'");
    }
    if (used != tail.size()) throw InputError("cannot parse degrees of freedom in '" + spec + "'");
    return student_t(nu);
}

std::string InnovationDist::name() const {
    if (kind_ == Kind::normal) return "normal";
    char buf[64];
    std::snprintf(buf, sizeof buf, "st:%.17g", nu_);
    return buf;
}

double InnovationDist::draw(Rng& rng) const {
    if (kind_ == Kind::normal) return rng.normal();
    const double z = rng.normal();
    const double c = rng.chi_square(nu_);
    return z / std::sqrt(c / nu_) * std::sqrt((nu_ - 2.0) / nu_);
}

double InnovationDist::abs_moment(double r) const {
    if (!(r > 0.0)) throw InputError("moment order must be positive");
    const double base = std::lgamma(0.5 * (r + 1.0)) - 0.5 * std::log(M_PI);
    if (kind_ == Kind::normal) return std::exp(0.5 * r * std::log(2.0) + base);
    if (!(r < nu_)) throw InputError("E|eta|^r is infinite for r >= nu");
    const double raw = 0.5 * r * std::log(nu_) + base + std::lgamma(0.5 * (nu_ - r)) - std::lgamma(0.5 * nu_);
    return std::exp(raw + 0.5 * r * std::log((nu_ - 2.0) / nu_));
}

double InnovationDist::quantile(double tau) const {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0,1)");
    if (kind_ == Kind::normal) return stats::normal_quantile(tau);
    return stats::student_t_quantile(tau, nu_) * std::sqrt((nu_ - 2.0) / nu_);
}

void SeriesData::validate() const {
    if (values.size() < 1) throw InputError("series is empty");
    for (Eigen::Index t = 0; t < values.size(); ++t)
        if (!std::isfinite(values(t))) throw InputError("non-finite observation", static_cast<std::size_t>(t));
    if (!timestamps.empty() && static_cast<Eigen::Index>(timestamps.size()) != values.size())
        throw InputError("timestamps and values differ in length");
}

SeriesData SeriesData::head(Eigen::Index count) const {
    count = std::min(count, values.size());
    std::vector<std::string> ts;
    if (!timestamps.empty()) ts.assign(timestamps.begin(), timestamps.begin() + count);
    return SeriesData(values.head(count), std::move(ts));
}

VolatilityState<double> initial_state(const SeriesData& series, const Params& params, const InitRule& rule) {
    VolatilityState<double> s;
    switch (rule.kind) {
        case InitRule::Kind::sample_mean:
        case InitRule::Kind::leading_mean: {
            Eigen::Index m = series.size();
            if (rule.kind == InitRule::Kind::leading_mean) {
                if (rule.block < 1) throw InputError("leading-mean block must be positive");
                m = std::min(m, rule.block);
            }
            double acc = 0.0;
            for (Eigen::Index t = 0; t < m; ++t) acc += std::pow(std::abs(series.values(t)), params.delta);
            s.sigma_delta = m > 0 ? acc / static_cast<double>(m) : 0.0;
            s.epsilon = 0.0;
            break;
        }
        case InitRule::Kind::unconditional:
            s.sigma_delta = params.omega / (1.0 - std::min(params.beta, 0.99));
            s.epsilon = 0.0;
            break;
        case InitRule::Kind::fixed:
            s.sigma_delta = rule.sigma_delta0;
            s.epsilon = rule.epsilon0;
            break;
    }
    return s;
}

VolatilityPath volatility_path(const SeriesData& series, const Params& params, const InitRule& rule) {
    params.validate();
    series.validate();
    return volatility_path<double>(series.values, params, initial_state(series, params, rule));
}

SimulatedPath simulate(const Params& params, const InnovationDist& dist, Eigen::Index n, Eigen::Index burnin,
                       std::uint64_t seed) {
    params.validate();
    if (n < 1) throw InputError("simulate needs n >= 1");
    if (burnin < 0) throw InputError("burn-in must be non-negative");

    Rng rng(seed);
    const double inv_delta = 1.0 / params.delta;
    SimulatedPath out;
    out.series.values.resize(n);
    out.h.resize(n);
    out.log_h.resize(n);
    out.eta.resize(n);

    double h = params.omega / (1.0 - std::min(params.beta, 0.99));
    double log_h = std::log(h);
    double eps = 0.0;
    double eta_prev = 0.0;
    bool in_log = false;

    const Eigen::Index total = burnin + n;
    for (Eigen::Index step = 0; step < total; ++step) {
        if (step == burnin) {
            out.init_h = in_log ? std::exp(log_h) : h;
            out.init_epsilon = eps;
        }
        if (!in_log) {
            const double next = recursion_step(params, positive_power(eps, params.delta),
                                               negative_power(eps, params.delta), h);
            if (next > kLogSpaceThreshold) {
                in_log = true;
                out.log_space = true;
                log_h = std::log(h) + std::log(a0(params, eta_prev) + params.omega / h);
            } else {
                h = next;
                log_h = std::log(h);
            }
        } else {
            log_h += std::log(a0(params, eta_prev) + params.omega * std::exp(-log_h));
        }
        const double eta = dist.draw(rng);
        eps = in_log ? std::exp(log_h * inv_delta) * eta : std::pow(h, inv_delta) * eta;
        if (!std::isfinite(eps)) throw NumericalError("simulated return overflows double range", static_cast<std::size_t>(step - burnin));
        eta_prev = eta;
        if (step >= burnin) {
            const Eigen::Index t = step - burnin;
            out.series.values(t) = eps;
            out.h(t) = in_log ? std::exp(log_h) : h;
            out.log_h(t) = log_h;
            out.eta(t) = eta;
        }
    }
    return out;
}

Eigen::VectorXd transformed_draws(const InnovationDist& dist, double delta, Eigen::Index ndraws, std::uint64_t seed,
                                  unsigned jobs) {
    if (ndraws < 1) throw InputError("need at least one draw");
    if (!(delta > 0.0)) throw InputError("delta must be positive");
    Eigen::VectorXd out(ndraws);
    const Eigen::Index blocks = (ndraws + kDrawBlock - 1) / kDrawBlock;
    parallel_for(static_cast<std::size_t>(blocks), jobs, [&](std::size_t b) {
        Rng rng(derive_seed(seed, b));
        const Eigen::Index lo = static_cast<Eigen::Index>(b) * kDrawBlock;
        const Eigen::Index hi = std::min(ndraws, lo + kDrawBlock);
        if (delta == 2.0) {
            for (Eigen::Index i = lo; i < hi; ++i) {
                const double e = dist.draw(rng);
                out(i) = e * std::abs(e);
            }
        } else if (delta == 1.0) {
            for (Eigen::Index i = lo; i < hi; ++i) out(i) = dist.draw(rng);
        } else {
            for (Eigen::Index i = lo; i < hi; ++i) out(i) = transform(dist.draw(rng), delta);
        }
    });
    return out;
}

namespace {

inline double a0_from_transformed(const Params& p, double tx) {
    return tx > 0.0 ? p.alpha_plus * tx + p.beta : (tx < 0.0 ? p.beta - p.alpha_minus * tx : p.beta);
}

template <typename F>
void blockwise_moments(const Eigen::Ref<const Eigen::VectorXd>& x, F&& f, double& mean, double& var) {
    // Two-pass blockwise mean and variance; blocks keep rounding error
    // small for 1e7-sized samples.
    const Eigen::Index n = x.size();
    const Eigen::Index blocks = (n + kDrawBlock - 1) / kDrawBlock;
    std::vector<double> sums(static_cast<std::size_t>(blocks));
    for (Eigen::Index b = 0; b < blocks; ++b) {
        double s = 0.0;
        for (Eigen::Index i = b * kDrawBlock, e = std::min(n, (b + 1) * kDrawBlock); i < e; ++i) s += f(x(i));
        sums[static_cast<std::size_t>(b)] = s;
    }
    mean = pairwise_sum(sums.begin(), sums.end()) / static_cast<double>(n);
    for (Eigen::Index b = 0; b < blocks; ++b) {
        double s = 0.0;
        for (Eigen::Index i = b * kDrawBlock, e = std::min(n, (b + 1) * kDrawBlock); i < e; ++i) {
            const double d = f(x(i)) - mean;
            s += d * d;
        }
        sums[static_cast<std::size_t>(b)] = s;
    }
    var = n > 1 ? pairwise_sum(sums.begin(), sums.end()) / static_cast<double>(n - 1) : 0.0;
}

void check_a0_support(const Params& p) {
    if (!(p.alpha_plus >= 0.0 && p.alpha_minus >= 0.0 && p.beta >= 0.0))
        throw InputError("coefficients of a0 must be non-negative");
    if (p.alpha_plus == 0.0 && p.alpha_minus == 0.0 && p.beta == 0.0)
        throw InputError("a0 vanishes identically");
}

double log_a0_checked(const Params& p, double tx) {
    const double a = a0_from_transformed(p, tx);
    if (!(a > 0.0)) throw NumericalError("a0(eta) = 0 encountered; log undefined");
    return std::log(a);
}

}  // namespace

LyapunovEstimate lyapunov_mc(const Params& params, const Eigen::Ref<const Eigen::VectorXd>& tdraws) {
    check_a0_support(params);
    LyapunovEstimate est;
    est.ndraws = tdraws.size();
    if (params.alpha_plus == 0.0 && params.alpha_minus == 0.0) {
        est.gamma = std::log(params.beta);
        return est;
    }
    double mean = 0.0, var = 0.0;
    blockwise_moments(tdraws, [&](double tx) { return log_a0_checked(params, tx); }, mean, var);
    est.gamma = mean;
    est.std_error = std::sqrt(var / static_cast<double>(tdraws.size()));
    return est;
}

LyapunovEstimate lyapunov_mc(const Params& params, const InnovationDist& dist, Eigen::Index ndraws,
                             std::uint64_t seed, unsigned jobs) {
    if (ndraws < 1000) throw InputError("lyapunov_mc needs at least 1000 draws");
    return lyapunov_mc(params, transformed_draws(dist, params.delta, ndraws, seed, jobs));
}

double beta_boundary(const Params& params, const Eigen::Ref<const Eigen::VectorXd>& tdraws, double p) {
    check_a0_support(params);
    if (!(p >= 1.0)) throw InputError("beta_boundary needs p >= 1");
    if (params.alpha_plus == 0.0 && params.alpha_minus == 0.0) return params.beta;
    double mean = 0.0, var = 0.0;
    blockwise_moments(
        tdraws,
        [&](double tx) {
            const double a = a0_from_transformed(params, tx);
            if (!(a > 0.0)) throw NumericalError("a0(eta) = 0 encountered");
            return std::pow(a, -p);
        },
        mean, var);
    return std::pow(mean, -1.0 / p);
}

double beta_boundary(const Params& params, const InnovationDist& dist, double p, Eigen::Index ndraws,
                     std::uint64_t seed, unsigned jobs) {
    return beta_boundary(params, transformed_draws(dist, params.delta, ndraws, seed, jobs), p);
}

RootResult alpha_plus_for_zero_gamma(double alpha_minus, double beta, double delta,
                                     const Eigen::Ref<const Eigen::VectorXd>& tdraws, double tol) {
    auto gamma_at = [&](double ap) {
        return lyapunov_mc(Params{1.0, ap, alpha_minus, beta, delta}, tdraws).gamma;
    };
    RootResult res;
    double lo = 0.0;
    double g_lo = gamma_at(lo);
    if (g_lo >= 0.0) throw NumericalError("gamma0 is already non-negative at alpha_plus = 0; no sign change");
    double hi = 0.1;
    double g_hi = gamma_at(hi);
    while (g_hi < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw NumericalError("no sign change of gamma0 found while bracketing alpha_plus");
        g_hi = gamma_at(hi);
        ++res.iterations;
    }
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double g = gamma_at(mid);
        if (g < 0.0) lo = mid;
        else hi = mid;
        ++res.iterations;
    }
    res.alpha_plus = 0.5 * (lo + hi);
    res.gamma_at_root = gamma_at(res.alpha_plus);
    return res;
}

RootResult alpha_plus_for_zero_gamma(double alpha_minus, double beta, double delta, const InnovationDist& dist,
                                     Eigen::Index ndraws, std::uint64_t seed, double tol, unsigned jobs) {
    return alpha_plus_for_zero_gamma(alpha_minus, beta, delta, transformed_draws(dist, delta, ndraws, seed, jobs),
                                     tol);
}

}  // namespace apq
