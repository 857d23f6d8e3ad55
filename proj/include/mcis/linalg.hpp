#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "mcis/errors.hpp"

namespace mcis {

/// Moore-Penrose inverse of a symmetric PSD matrix through its spectral decomposition.
/// Eigenvalues at or below `rank_tol * lambda_max` are treated as zero. The default
/// threshold is k * machine epsilon.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, std::optional<double> rank_tol = std::nullopt) {
    if (m.rows() != m.cols()) throw InvalidParameter("pseudo_inverse: matrix must be square");
    const auto k = m.rows();
    if (k == 0) return m;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw InvalidParameter("pseudo_inverse: matrix must be symmetric");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double lambda_max = lambda.cwiseAbs().maxCoeff();
    if (lambda_max == 0.0) return Eigen::MatrixXd::Zero(k, k);
    const double tol = rank_tol.value_or(static_cast<double>(k) * std::numeric_limits<double>::epsilon()) * lambda_max;

    Eigen::VectorXd inv = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < k; ++i)
        if (lambda(i) > tol) inv(i) = 1.0 / lambda(i);
    const Eigen::MatrixXd& q = eig.eigenvectors();
    Eigen::MatrixXd out = q * inv.asDiagonal() * q.transpose();
    return 0.5 * (out + out.transpose());
}

}  // namespace mcis
