#pragma once

#include <Eigen/Dense>

#include "apq/errors.hpp"

namespace apq {

struct SpdInverse {
    Eigen::MatrixXd inverse;
    /// Spectral condition number of the diagonally equilibrated matrix.
    double condition = 0.0;
    bool pseudo = false;
    Eigen::VectorXd null_direction;
};

/// Inverts a symmetric positive semidefinite matrix after equilibrating its
/// diagonal, so the condition number does not depend on parameter units.
/// Above `max_condition` the call throws SingularMatrixError, unless
/// `allow_pseudo` is set, in which case the Moore-Penrose inverse of the
/// equilibrated matrix is returned and flagged.
template <typename Derived>
SpdInverse invert_spd(const Eigen::MatrixBase<Derived>& a, double max_condition = 1e12, bool allow_pseudo = false) {
    const Eigen::Index k = a.rows();
    Eigen::MatrixXd m = 0.5 * (a + a.transpose());
    Eigen::VectorXd d(k);
    for (Eigen::Index i = 0; i < k; ++i) d(i) = m(i, i) > 0.0 ? 1.0 / std::sqrt(m(i, i)) : 1.0;
    const Eigen::MatrixXd s = d.asDiagonal() * m * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed");
    const Eigen::VectorXd lam = es.eigenvalues();
    const double lmax = lam.maxCoeff();
    const double lmin = lam.minCoeff();
    SpdInverse out;
    out.condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    out.null_direction = d.asDiagonal() * es.eigenvectors().col(0);
    if (out.null_direction.norm() > 0.0) out.null_direction.normalize();
    if (!(lmax > 0.0) || out.condition > max_condition) {
        if (!allow_pseudo || !(lmax > 0.0))
            throw SingularMatrixError("matrix is singular or ill-conditioned", out.null_direction, out.condition);
        out.pseudo = true;
    }
    Eigen::VectorXd inv_lam(k);
    const double cut = lmax / max_condition;
    for (Eigen::Index i = 0; i < k; ++i) inv_lam(i) = lam(i) > cut ? 1.0 / lam(i) : 0.0;
    const Eigen::MatrixXd sinv = es.eigenvectors() * inv_lam.asDiagonal() * es.eigenvectors().transpose();
    out.inverse = d.asDiagonal() * sinv * d.asDiagonal();
    return out;
}

}  // namespace apq
