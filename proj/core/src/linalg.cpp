#include "mplnbc/linalg.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "mplnbc/error.hpp"

namespace mpln::linalg {

namespace {

Eigen::LLT<Eigen::MatrixXd> factor(const SymMatrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorCode::invalid_argument, "matrix is not square");
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::not_positive_definite, "Cholesky pivot <= 0");
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) throw Error(ErrorCode::not_positive_definite, "Cholesky pivot <= 0");
  }
  return llt;
}

}  // namespace

Eigen::MatrixXd cholesky(const SymMatrix& a) {
  auto llt = factor(a);
  return llt.matrixL();
}

double logdet_pd(const SymMatrix& a) {
  const auto llt = factor(a);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd solve_pd(const SymMatrix& a, const Eigen::VectorXd& b) {
  if (b.size() != a.rows()) throw Error(ErrorCode::dimension_mismatch, "right-hand side does not conform");
  return factor(a).solve(b);
}

Eigen::MatrixXd solve_pd(const SymMatrix& a, const Eigen::MatrixXd& b) {
  if (b.rows() != a.rows()) throw Error(ErrorCode::dimension_mismatch, "right-hand side does not conform");
  return factor(a).solve(b);
}

SymMatrix inverse_pd(const SymMatrix& a) {
  SymMatrix inv = factor(a).solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  symmetrize(inv);
  return inv;
}

SymMatrix corr_from_cov(const SymMatrix& w) {
  const Eigen::Index d = w.rows();
  Eigen::VectorXd inv_sd(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(w(j, j) > 0.0)) throw Error(ErrorCode::zero_variance, "variable " + std::to_string(j + 1) + " has no variance");
    inv_sd[j] = 1.0 / std::sqrt(w(j, j));
  }
  SymMatrix r = inv_sd.asDiagonal() * w * inv_sd.asDiagonal();
  symmetrize(r);
  r.diagonal().setOnes();
  return r;
}

Eigen::MatrixXd cholesky_with_jitter(SymMatrix& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) {
    return llt.matrixL();
  }
  a.diagonal().array() += 1e-8 * a.diagonal().mean();
  return cholesky(a);
}

}  // namespace mpln::linalg
