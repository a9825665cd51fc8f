#include "apq/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "apq/linalg.hpp"
#include "apq/parallel.hpp"

namespace apq {

namespace {

constexpr double kWeightFloor = 1e-12;
constexpr double kDensityFloor = 1e-6;

void check_sample(const Eigen::Ref<const Eigen::VectorXd>& sample, Eigen::Index min_size) {
    if (sample.size() < min_size) throw InputError("sample too small");
    for (Eigen::Index i = 0; i < sample.size(); ++i)
        if (!std::isfinite(sample(i))) throw InputError("non-finite sample value", static_cast<std::size_t>(i));
}

void check_tau(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0,1)");
}

}  // namespace

double empirical_quantile(const Eigen::Ref<const Eigen::VectorXd>& sample, double tau) {
    check_tau(tau);
    check_sample(sample, 1);
    const auto n = sample.size();
    auto k = static_cast<Eigen::Index>(std::ceil(static_cast<double>(n) * tau - 1e-9));
    k = std::clamp<Eigen::Index>(k, 1, n);
    std::vector<double> v(sample.data(), sample.data() + n);
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
    return v[static_cast<std::size_t>(k - 1)];
}

double interpolated_quantile(const Eigen::Ref<const Eigen::VectorXd>& sample, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("probability must lie in [0,1]");
    check_sample(sample, 1);
    std::vector<double> v(sample.data(), sample.data() + sample.size());
    std::sort(v.begin(), v.end());
    const double h = static_cast<double>(v.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double rule_of_thumb_bandwidth(Eigen::Index n, double sd, double iqr) {
    if (n < 2) throw InputError("bandwidth needs at least two observations");
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0) || !std::isfinite(spread)) throw InputError("sample has zero spread");
    return 0.9 * std::pow(static_cast<double>(n), -0.2) * spread;
}

double kde_rule_of_thumb(const Eigen::Ref<const Eigen::VectorXd>& sample) {
    check_sample(sample, 2);
    const auto n = sample.size();
    const double mean = sample.mean();
    const double sd = std::sqrt((sample.array() - mean).square().sum() / static_cast<double>(n - 1));
    const double iqr = interpolated_quantile(sample, 0.75) - interpolated_quantile(sample, 0.25);
    return rule_of_thumb_bandwidth(n, sd, iqr);
}

double kde_density_at(const Eigen::Ref<const Eigen::VectorXd>& sample, double x0, double bandwidth) {
    check_sample(sample, 1);
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw InputError("bandwidth must be positive");
    std::vector<double> k(static_cast<std::size_t>(sample.size()));
    for (Eigen::Index i = 0; i < sample.size(); ++i) {
        const double u = (sample(i) - x0) / bandwidth;
        k[static_cast<std::size_t>(i)] = std::exp(-0.5 * u * u);
    }
    // Summing in sorted order makes the estimate a symmetric function of the sample.
    std::sort(k.begin(), k.end());
    const double total = pairwise_sum(k.begin(), k.end());
    return total / (static_cast<double>(sample.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
}

double kde_density_at(const Eigen::Ref<const Eigen::VectorXd>& sample, double x0) {
    return kde_density_at(sample, x0, kde_rule_of_thumb(sample));
}

HybridCovariance hybrid_avar(const GqmleFit& step1, double tau, double q_tau_eta, double f_at_b) {
    check_tau(tau);
    if (!(f_at_b >= kDensityFloor)) throw NumericalError("density at the quantile is too small for a stable covariance");
    const Eigen::Index n = step1.n();
    if (n < 1 || step1.regressors.rows() != n || step1.path.grad.rows() != n)
        throw InputError("step-one fit is incomplete");
    const double r = step1.r;
    const double delta = step1.delta();
    const double b = transform(q_tau_eta, delta);
    const bool allow_pseudo = step1.alpha_at_zero || step1.beta_at_bound;

    const SpdInverse Jinv = invert_spd(step1.J_tilde, 1e12, allow_pseudo);
    const SpdInverse Oinv = invert_spd(step1.Omega_tilde, 1e12, allow_pseudo);
    const Matrix3d Jvv = step1.J_tilde.bottomRightCorner<3, 3>();
    const Matrix3d Ovv = step1.Omega_tilde.bottomRightCorner<3, 3>();
    const SpdInverse Jvv_inv = invert_spd(Jvv, 1e12, allow_pseudo);
    const SpdInverse Ovv_inv = invert_spd(Ovv, 1e12, allow_pseudo);

    const double U = 1.0 / f_at_b;
    const Matrix4d V = (b * delta / r) * step1.Gamma_tilde * Matrix4d(Jinv.inverse);
    const Matrix3d Vv = (b * delta / r) * step1.Gamma_tilde.bottomRightCorner<3, 3>() * Matrix3d(Jvv_inv.inverse);

    Matrix4d meat = Matrix4d::Zero();
    Matrix3d meat_v = Matrix3d::Zero();
    for (Eigen::Index t = 0; t < n; ++t) {
        const double h = std::max(step1.path.sigma_delta(t), kWeightFloor);
        const double eta = step1.residuals(t);
        const Vector4d z = step1.regressors.row(t).transpose();
        const Vector4d g = step1.path.grad.row(t).transpose();
        const Vector4d u = (check_score(eta - q_tau_eta, tau) / h) * z;
        const Vector4d v = ((1.0 - std::pow(std::abs(eta), r)) / h) * g;
        const Vector4d e = U * u + V * v;
        const Eigen::Vector3d ev = U * u.tail<3>() + Vv * v.tail<3>();
        meat.noalias() += e * e.transpose();
        meat_v.noalias() += ev * ev.transpose();
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    meat *= inv_n;
    meat_v *= inv_n;

    HybridCovariance out;
    const Matrix4d Oi = Oinv.inverse;
    const Matrix3d Ovi = Ovv_inv.inverse;
    out.Sigma = Oi * meat * Oi * inv_n;
    out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose()).eval();
    out.Sigma_vartheta_block = out.Sigma.bottomRightCorner<3, 3>();
    out.Sigma_vartheta_only = Ovi * meat_v * Ovi * inv_n;
    out.Sigma_vartheta_only = 0.5 * (out.Sigma_vartheta_only + out.Sigma_vartheta_only.transpose()).eval();
    out.pseudo_inverse = Jinv.pseudo || Oinv.pseudo || Jvv_inv.pseudo || Ovv_inv.pseudo;
    return out;
}

QuantileFit fit_quantile(const SeriesData& series, const GqmleFit& step1, double tau) {
    check_tau(tau);
    if (!step1.converged) throw InputError("step-one fit did not converge");
    const Eigen::Index n = series.size();
    if (n != step1.n()) throw InputError("series and step-one fit differ in length");
    const double delta = step1.delta();

    QuantileFit q;
    q.tau = tau;
    q.q_tau_eta = empirical_quantile(step1.residuals, tau);
    q.b_tau_tilde = transform(q.q_tau_eta, delta);

    Eigen::VectorXd y(n), w(n), ty(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        y(t) = transform(series.values(t), delta);
        w(t) = std::max(step1.path.sigma_delta(t), kWeightFloor);
        ty(t) = transform(step1.residuals(t), delta);
    }
    const Eigen::MatrixXd Z = step1.regressors;
    const Eigen::VectorXd start = q.b_tau_tilde * step1.theta_hat.theta();
    const QrSolution sol = weighted_quantile_regression(Z, y, w, tau, start);
    q.theta_tau_hat = sol.coef;
    q.objective = sol.objective;
    q.certificate = sol.certificate;
    q.iterations = sol.iterations;
    q.exact_fits = sol.certificate.zero_residuals;

    q.bandwidth = kde_rule_of_thumb(ty);
    q.f_at_b = kde_density_at(ty, q.b_tau_tilde, q.bandwidth);

    const double r = step1.r;
    double below = 0.0, log_sum = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double eta = step1.residuals(t);
        if (eta < q.q_tau_eta) below += std::pow(std::abs(eta), r);
        log_sum += std::log(a0(step1.theta_hat, eta));
    }
    q.kappa1r_hat = (below / static_cast<double>(n) - tau) / r;
    q.gamma_tilde = log_sum / static_cast<double>(n);
    q.nonstationary = !(q.gamma_tilde < 0.0);
    if (q.nonstationary) q.warnings.emplace_back("non-stationary regime: drift term unreliable");

    const HybridCovariance cov = hybrid_avar(step1, tau, q.q_tau_eta, q.f_at_b);
    q.Sigma_tilde = cov.Sigma;
    q.Sigma_vartheta_tilde = cov.Sigma_vartheta_block;
    q.Sigma_vartheta_only = cov.Sigma_vartheta_only;
    q.pseudo_inverse = cov.pseudo_inverse;
    if (q.pseudo_inverse) q.warnings.emplace_back("pseudo-inverse used in the covariance");
    return q;
}

Eigen::VectorXd fitted_quantiles(const GqmleFit& step1, const QuantileFit& qfit) {
    return step1.regressors * qfit.theta_tau_hat;
}

double conditional_quantile_forecast(const SeriesData& series, const GqmleFit& step1, const QuantileFit& qfit) {
    const Eigen::Index n = series.size();
    if (n < 1 || step1.path.sigma_delta.size() != n) throw InputError("series and step-one fit differ in length");
    const double delta = step1.delta();
    const double last = series.values(n - 1);
    const Vector4d z(1.0, positive_power(last, delta), negative_power(last, delta), step1.path.sigma_delta(n - 1));
    return inverse_transform(qfit.theta_tau_hat.dot(z), delta);
}

}  // namespace apq
