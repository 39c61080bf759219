#pragma once

#include <Eigen/Core>

namespace mpln::linalg {

/// Dense symmetric matrix storage. Symmetry is a caller invariant; routines
/// that need positive definiteness verify it through the factorization.
using SymMatrix = Eigen::MatrixXd;

/// Lower-triangular L with L * L^T = a. Throws NotPositiveDefinite when a
/// pivot is not strictly positive.
Eigen::MatrixXd cholesky(const SymMatrix& a);

/// log|a| = 2 * sum(log L_ii).
double logdet_pd(const SymMatrix& a);

Eigen::VectorXd solve_pd(const SymMatrix& a, const Eigen::VectorXd& b);
Eigen::MatrixXd solve_pd(const SymMatrix& a, const Eigen::MatrixXd& b);

/// a^{-1} via its Cholesky factor; result is exactly symmetric.
SymMatrix inverse_pd(const SymMatrix& a);

/// r_ij = w_ij / sqrt(w_ii w_jj) with an exact unit diagonal. Throws ZeroVariance
/// when a diagonal entry is not positive.
SymMatrix corr_from_cov(const SymMatrix& w);

/// Factorizes `a`; on failure adds 1e-8 * mean(diag(a)) to the diagonal of `a`
/// and retries once. Returns the factor; `a` holds the matrix actually factored.
Eigen::MatrixXd cholesky_with_jitter(SymMatrix& a);

/// (a + a^T) / 2, used after accumulations that can drift by rounding.
inline void symmetrize(SymMatrix& a) { a = (0.5 * (a + a.transpose())).eval(); }

}  // namespace mpln::linalg
