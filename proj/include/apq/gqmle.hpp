#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apq/core.hpp"

namespace apq {

using Matrix4d = Eigen::Matrix4d;
using Vector4d = Eigen::Vector4d;
using Matrix3d = Eigen::Matrix3d;

struct OptimOptions {
    double tol = 1e-8;          ///< projected-gradient sup-norm at convergence
    int max_iter = 500;         ///< Newton iterations per start
    int multistarts = 8;        ///< number of grid starts used (1..9)
    double omega_lower = 1e-8;
    double omega_upper_factor = 10.0;  ///< omega upper bound = factor * mean |eps|^delta
    double alpha_upper = 5.0;
    double beta_upper = 0.9999;
    bool symmetric_alpha = false;      ///< impose alpha_plus == alpha_minus
    InitRule init{};
    unsigned jobs = 1;
    std::optional<Vector4d> warm_start;  ///< tried before the grid when set
};

struct ObjectiveValue {
    double value = 0.0;
    Vector4d gradient = Vector4d::Zero();
    Matrix4d hessian = Matrix4d::Zero();
    Matrix4d fisher = Matrix4d::Zero();  ///< (r/delta)^2 (1/n) sum g g' / h^2
    bool floor_hit = false;
};

/// Mean GQMLE loss (1/n) sum [r log sigma_t + |eps_t|^r / sigma_t^r] and its
/// derivatives. The Hessian is exact.
ObjectiveValue gqmle_objective(const Params& theta, const SeriesData& series, double r,
                               const InitRule& init = {});

struct StartRecord {
    Vector4d start = Vector4d::Zero();
    double start_objective = 0.0;
    Vector4d end = Vector4d::Zero();
    double end_objective = 0.0;
    double projected_gradient = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct GqmleFit {
    Params theta_hat;
    double r = 2.0;
    double objective = 0.0;
    Eigen::VectorXd residuals;  ///< eta_t = eps_t / sigma_t(theta_hat)
    VolatilityPath path;
    /// Step-two regressors z_t = (1, (eps_{t-1}^+)^delta, (-eps_{t-1}^-)^delta, sigma_{t-1}^delta)
    Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> regressors;
    Matrix4d J_tilde = Matrix4d::Zero();
    Matrix4d Omega_tilde = Matrix4d::Zero();
    Matrix4d H_tilde = Matrix4d::Zero();
    Matrix4d Gamma_tilde = Matrix4d::Zero();
    double kappa2r_hat = 0.0;

    bool converged = false;
    int iterations = 0;
    double projected_gradient = 0.0;
    int best_start = -1;
    std::vector<StartRecord> starts;
    bool omega_at_bound = false;
    bool alpha_at_zero = false;
    bool beta_at_bound = false;
    bool floor_hit = false;
    std::vector<std::string> warnings;

    Eigen::Index n() const { return residuals.size(); }
    double delta() const { return theta_hat.delta; }
};

GqmleFit fit_gqmle(const SeriesData& series, double r, double delta, const OptimOptions& opts = {});

/// Fills residuals, regressors and the plug-in matrices at a given theta.
GqmleFit evaluate_gqmle_at(const SeriesData& series, const Params& theta, double r, const InitRule& init);

struct GqmleCovariance {
    Matrix4d cov_theta = Matrix4d::Zero();          ///< kappa delta^2 J^{-1} / n
    Matrix3d cov_vartheta_star = Matrix3d::Zero();  ///< sandwich for (alpha+, alpha-, beta), / n
    double condition = 0.0;
    bool pseudo_inverse = false;
};

GqmleCovariance gqmle_avar(const GqmleFit& fit);

}  // namespace apq
