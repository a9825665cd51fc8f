#include "apq/inference.hpp"

#include <cmath>

#include "apq/digest.hpp"
#include "apq/linalg.hpp"
#include "apq/stats.hpp"

namespace apq {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("significance level must lie in (0,1)");
}

double log_a0(const Params& p, double eta, Eigen::Index t) {
    const double a = a0(p, eta);
    if (!(a > 0.0))
        throw NumericalError("a0 vanishes at a zero residual with beta = 0; log undefined", static_cast<std::size_t>(t));
    return std::log(a);
}

TestReport finish(TestKind kind, NullDist dist, double statistic, double alpha, double estimate, double scale,
                  const GqmleFit& step1) {
    TestReport rep;
    rep.name = kind;
    rep.null_dist = dist;
    rep.statistic = statistic;
    rep.p_value = normal_p_value(statistic, dist);
    rep.alpha = alpha;
    rep.reject = rep.p_value < alpha;
    rep.estimate = estimate;
    rep.scale = scale;
    rep.inputs_digest = fit_digest(step1);
    return rep;
}

}  // namespace

std::string to_string(TestKind kind) {
    switch (kind) {
        case TestKind::stationarity_ST: return "stationarity_ST";
        case TestKind::stationarity_NT: return "stationarity_NT";
        case TestKind::asymmetry_global: return "asymmetry_global";
        case TestKind::asymmetry_local: return "asymmetry_local";
    }
    return "unknown";
}

std::string to_string(NullDist dist) {
    switch (dist) {
        case NullDist::normal_upper: return "standard normal, upper tail";
        case NullDist::normal_lower: return "standard normal, lower tail";
        case NullDist::normal_two_sided: return "standard normal, two-sided";
    }
    return "unknown";
}

double normal_p_value(double statistic, NullDist dist) {
    switch (dist) {
        case NullDist::normal_upper: return stats::normal_sf(statistic);
        case NullDist::normal_lower: return stats::normal_sf(-statistic);
        case NullDist::normal_two_sided: return std::min(1.0, 2.0 * stats::normal_sf(std::abs(statistic)));
    }
    return 1.0;
}

std::string fit_digest(const GqmleFit& step1) {
    Digest d;
    d.add(step1.theta_hat.theta()).add(step1.theta_hat.delta).add(step1.r).add(step1.residuals);
    return d.hex();
}

GammaEstimate gamma_hat(const GqmleFit& step1) {
    const Eigen::Index n = step1.n();
    if (n < 2) throw InputError("need at least two residuals");
    double mean = 0.0, m2 = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double x = log_a0(step1.theta_hat, step1.residuals(t), t);
        const double d = x - mean;
        mean += d / static_cast<double>(t + 1);
        m2 += d * (x - mean);
    }
    GammaEstimate g;
    g.gamma = mean;
    g.sigma_u = std::sqrt(m2 / static_cast<double>(n - 1));
    g.n = n;
    return g;
}

GammaVariance gamma_variance(const GqmleFit& step1) {
    const GammaEstimate g = gamma_hat(step1);
    const Params& p = step1.theta_hat;
    const Eigen::Index n = step1.n();
    Vector4d a = Vector4d::Zero();
    double beta_ratio = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double eta = step1.residuals(t);
        const double inv = 1.0 / a0(p, eta);
        a(1) += positive_power(eta, p.delta) * inv;
        a(2) += negative_power(eta, p.delta) * inv;
        a(3) += inv;
        beta_ratio += p.beta * inv;
    }
    a /= static_cast<double>(n);
    beta_ratio /= static_cast<double>(n);
    const SpdInverse Jinv = invert_spd(step1.J_tilde, 1e12, step1.alpha_at_zero || step1.beta_at_bound);
    const double quad = a.dot(Jinv.inverse * a);
    GammaVariance v;
    v.sigma2_u = g.sigma_u * g.sigma_u;
    v.sigma2_nonstationary = v.sigma2_u;
    v.sigma2_stationary =
        v.sigma2_u + p.delta * p.delta * step1.kappa2r_hat * (quad - (1.0 - beta_ratio) * (1.0 - beta_ratio));
    return v;
}

TestReport stationarity_test(const GqmleFit& step1, StationarityHypothesis hypothesis, double alpha) {
    check_alpha(alpha);
    const GammaEstimate g = gamma_hat(step1);
    if (!(g.sigma_u > 0.0)) throw NumericalError("log a0 sequence has zero spread");
    const double stat = std::sqrt(static_cast<double>(g.n)) * g.gamma / g.sigma_u;
    if (hypothesis == StationarityHypothesis::stationary)
        return finish(TestKind::stationarity_ST, NullDist::normal_upper, stat, alpha, g.gamma, g.sigma_u, step1);
    return finish(TestKind::stationarity_NT, NullDist::normal_lower, stat, alpha, g.gamma, g.sigma_u, step1);
}

TestReport asymmetry_test_global(const GqmleFit& step1, double alpha) {
    check_alpha(alpha);
    const GqmleCovariance cov = gqmle_avar(step1);
    const Eigen::Vector3d e(1.0, -1.0, 0.0);
    const double var = e.dot(cov.cov_vartheta_star * e);
    if (!(var > 0.0)) throw NumericalError("nonpositive variance for the alpha difference");
    const double diff = step1.theta_hat.alpha_plus - step1.theta_hat.alpha_minus;
    const double n = static_cast<double>(step1.n());
    return finish(TestKind::asymmetry_global, NullDist::normal_two_sided, diff / std::sqrt(var), alpha, diff,
                  std::sqrt(var * n), step1);
}

TestReport asymmetry_test_local(const GqmleFit& step1, const QuantileFit& qfit, double alpha) {
    check_alpha(alpha);
    const Eigen::Vector3d e(1.0, -1.0, 0.0);
    const double var = e.dot(qfit.Sigma_vartheta_tilde * e);
    if (!(var > 0.0)) throw NumericalError("nonpositive variance for the alpha difference");
    const double diff = qfit.theta_tau_hat(1) - qfit.theta_tau_hat(2);
    const double n = static_cast<double>(step1.n());
    return finish(TestKind::asymmetry_local, NullDist::normal_two_sided, diff / std::sqrt(var), alpha, diff,
                  std::sqrt(var * n), step1);
}

}  // namespace apq
