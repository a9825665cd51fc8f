#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "apq/core.hpp"
#include "apq/gqmle.hpp"
#include "apq/quantile_regression.hpp"

namespace apq {

struct QuantileFit {
    double tau = 0.05;
    Vector4d theta_tau_hat = Vector4d::Zero();  ///< (omega, alpha+, alpha-, beta) at level tau, signs free
    double q_tau_eta = 0.0;                     ///< empirical tau-quantile of the step-one residuals
    double b_tau_tilde = 0.0;                   ///< T(q_tau_eta)
    double f_at_b = 0.0;                        ///< kernel density of T(eta) at b_tau_tilde
    double bandwidth = 0.0;
    Matrix4d Sigma_tilde = Matrix4d::Zero();           ///< already divided by n
    Matrix3d Sigma_vartheta_tilde = Matrix3d::Zero();  ///< lower 3x3 block of Sigma_tilde
    Matrix3d Sigma_vartheta_only = Matrix3d::Zero();   ///< sandwich built from the (alpha, beta) blocks alone
    double kappa1r_hat = 0.0;
    double objective = 0.0;
    QrCertificate certificate;
    int iterations = 0;
    Eigen::Index exact_fits = 0;
    double gamma_tilde = 0.0;    ///< mean log a0 over the step-one residuals
    bool nonstationary = false;  ///< set when gamma_tilde >= 0; the omega entries are then unreliable
    bool pseudo_inverse = false;
    std::vector<std::string> warnings;

    Vector4d standard_errors() const { return Sigma_tilde.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

/// The ceil(n tau)-th order statistic.
double empirical_quantile(const Eigen::Ref<const Eigen::VectorXd>& sample, double tau);

/// Type-7 (linear interpolation) sample quantile.
double interpolated_quantile(const Eigen::Ref<const Eigen::VectorXd>& sample, double tau);

double rule_of_thumb_bandwidth(Eigen::Index n, double sd, double iqr);

/// 0.9 n^{-1/5} min(s, IQR / 1.34).
double kde_rule_of_thumb(const Eigen::Ref<const Eigen::VectorXd>& sample);

/// Gaussian kernel density estimate at x0 with the rule-of-thumb bandwidth.
double kde_density_at(const Eigen::Ref<const Eigen::VectorXd>& sample, double x0);
double kde_density_at(const Eigen::Ref<const Eigen::VectorXd>& sample, double x0, double bandwidth);

struct HybridCovariance {
    Matrix4d Sigma = Matrix4d::Zero();
    Matrix3d Sigma_vartheta_block = Matrix3d::Zero();
    Matrix3d Sigma_vartheta_only = Matrix3d::Zero();
    bool pseudo_inverse = false;
};

/// Plug-in covariance of the hybrid estimator, divided by n.
HybridCovariance hybrid_avar(const GqmleFit& step1, double tau, double q_tau_eta, double f_at_b);

QuantileFit fit_quantile(const SeriesData& series, const GqmleFit& step1, double tau);

/// In-sample fitted quantiles theta_tau' z_t on the transformed scale.
Eigen::VectorXd fitted_quantiles(const GqmleFit& step1, const QuantileFit& qfit);

/// One-step-ahead conditional quantile of eps_{n+1}.
double conditional_quantile_forecast(const SeriesData& series, const GqmleFit& step1, const QuantileFit& qfit);

}  // namespace apq
