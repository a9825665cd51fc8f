#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

namespace apq {

/// Check loss rho_tau(u) = u (tau - I(u < 0)).
inline double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

/// Subgradient psi_tau(u) = tau - I(u < 0).
inline double check_score(double u, double tau) { return tau - (u < 0.0 ? 1.0 : 0.0); }

struct QrCertificate {
    /// Every edge direction out of the final vertex is non-descending.
    bool edges_nonnegative = false;
    /// Per-column subgradient interval condition holds.
    bool interval_condition = false;
    /// Largest violation of the interval condition, relative to the column scale.
    double max_violation = 0.0;
    /// Dual values of the basic observations, each in [tau - 1, tau] at an optimum.
    Eigen::VectorXd basic_duals;
    std::vector<Eigen::Index> basis;
    Eigen::Index zero_residuals = 0;
    bool degenerate = false;

    bool ok() const { return edges_nonnegative && interval_condition; }
};

struct QrSolution {
    Eigen::VectorXd coef;
    double objective = 0.0;     ///< sum rho_tau((y - X b) / w)
    Eigen::VectorXd residuals;  ///< y - X b (unweighted)
    QrCertificate certificate;
    int iterations = 0;
};

/// Minimises sum_t rho_tau((y_t - x_t' b) / w_t) by a simplex-type descent over
/// vertices (k observations fitted exactly). The search starts from the vertex
/// closest to `start` (weighted least squares when absent) and moves along
/// the steepest descending edge until none descends; ties fall to the lowest
/// index. Throws SingularMatrixError for a rank-deficient design.
QrSolution weighted_quantile_regression(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                        const Eigen::Ref<const Eigen::VectorXd>& y,
                                        const Eigen::Ref<const Eigen::VectorXd>& w, double tau,
                                        const std::optional<Eigen::VectorXd>& start = std::nullopt);

/// Checks the subgradient interval condition for a candidate coefficient vector.
QrCertificate verify_quantile_optimality(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const Eigen::Ref<const Eigen::VectorXd>& w, double tau,
                                         const Eigen::Ref<const Eigen::VectorXd>& coef);

}  // namespace apq
