#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pgoc/errors.hpp"
#include "pgoc/rng.hpp"

namespace pgoc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
inline MatrixXd cholesky(const MatrixXd& m, const char* name) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(name) + ": matrix is not positive definite");
  }
  return llt.matrixL();
}

/// Factor B with B*B^T = cov for a positive semi-definite cov. Exact zeros are
/// allowed (zero noise); small negative eigenvalues within roundoff are clamped.
inline MatrixXd psd_factor(const MatrixXd& cov, const char* name = "psd_factor") {
  if (!is_symmetric(cov, 1e-10)) {
    throw std::invalid_argument(std::string(name) + ": covariance must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10 * scale) {
      throw std::invalid_argument(std::string(name) + ": covariance has a negative eigenvalue");
    }
    ev(i) = std::max(ev(i), 0.0);
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

inline VectorXd standard_normal_vector(Eigen::Index n, RngStream& rng) {
  VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  return z;
}

inline MatrixXd standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  MatrixXd z(rows, cols);
  // Row-major fill order; fixed so equal seeds give equal matrices.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = rng.normal();
  return z;
}

/// Gaussian density with precomputed factorization, used for particle weights
/// and transition densities.
class GaussianDensity {
 public:
  GaussianDensity(VectorXd mean, const MatrixXd& cov)
      : mean_(std::move(mean)), llt_(cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean_.size()) {
      throw std::invalid_argument("GaussianDensity: dimension mismatch");
    }
    if (llt_.info() != Eigen::Success) {
      throw NumericalError("GaussianDensity: covariance is not positive definite");
    }
    log_norm_ = -0.5 * mean_.size() * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      log_norm_ -= std::log(llt_.matrixL()(i, i));
    }
  }

  const VectorXd& mean() const { return mean_; }

  double log_density(const VectorXd& x) const {
    const VectorXd r = llt_.matrixL().solve(x - mean_);
    return log_norm_ - 0.5 * r.squaredNorm();
  }

  /// log N(x; m, cov) for an alternative mean with the same covariance.
  double log_density(const VectorXd& x, const VectorXd& m) const {
    const VectorXd r = llt_.matrixL().solve(x - m);
    return log_norm_ - 0.5 * r.squaredNorm();
  }

  VectorXd sample(RngStream& rng) const {
    return mean_ + llt_.matrixL() * standard_normal_vector(mean_.size(), rng);
  }

 private:
  VectorXd mean_;
  Eigen::LLT<MatrixXd> llt_;
  double log_norm_;
};

/// Wishart(scale, dof) draw via the Bartlett decomposition.
inline MatrixXd sample_wishart(const MatrixXd& scale, double dof, RngStream& rng) {
  const Eigen::Index n = scale.rows();
  if (!is_symmetric(scale, 1e-10)) {
    throw std::invalid_argument("sample_wishart: scale must be symmetric");
  }
  if (!(dof > static_cast<double>(n) - 1.0)) {
    throw std::invalid_argument("sample_wishart: dof must exceed n - 1");
  }
  const MatrixXd l = cholesky(scale, "sample_wishart scale");
  MatrixXd a = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const MatrixXd la = l * a;
  return la * la.transpose();
}

/// Inverse-Wishart(scale_matrix, dof) draw: W ~ Wishart(scale^-1, dof),
/// returned as symmetrized W^-1. Mean is scale / (dof - n - 1) for
/// dof > n + 1.
inline MatrixXd sample_inverse_wishart(const MatrixXd& scale_matrix, double dof,
                                       RngStream& rng) {
  const Eigen::Index n = scale_matrix.rows();
  if (scale_matrix.rows() != scale_matrix.cols()) {
    throw std::invalid_argument("sample_inverse_wishart: scale must be square");
  }
  if (!is_symmetric(scale_matrix, 1e-10)) {
    throw std::invalid_argument("sample_inverse_wishart: scale must be symmetric");
  }
  if (!(dof > static_cast<double>(n) - 1.0)) {
    throw std::invalid_argument("sample_inverse_wishart: dof must exceed n - 1");
  }
  Eigen::LLT<MatrixXd> llt(scale_matrix);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("sample_inverse_wishart: scale must be positive definite");
  }
  const MatrixXd scale_inv = llt.solve(MatrixXd::Identity(n, n));
  const MatrixXd w = sample_wishart(0.5 * (scale_inv + scale_inv.transpose()), dof, rng);
  Eigen::LLT<MatrixXd> lltw(w);
  if (lltw.info() != Eigen::Success) {
    throw NumericalError("sample_inverse_wishart: Wishart draw not invertible");
  }
  const MatrixXd q = lltw.solve(MatrixXd::Identity(n, n));
  return 0.5 * (q + q.transpose());
}

/// Matrix-normal MN(mean, row_cov, col_cov) draw: mean + L_r Z L_c^T with Z iid
/// standard normal. vec of the sample in row-major order has covariance
/// row_cov (Kronecker) col_cov.
inline MatrixXd sample_matrix_normal(const MatrixXd& mean, const MatrixXd& row_cov,
                                     const MatrixXd& col_cov, RngStream& rng) {
  if (row_cov.rows() != mean.rows() || col_cov.rows() != mean.cols()) {
    throw std::invalid_argument("sample_matrix_normal: shape mismatch");
  }
  if (!is_symmetric(row_cov, 1e-10) || !is_symmetric(col_cov, 1e-10)) {
    throw std::invalid_argument("sample_matrix_normal: covariances must be symmetric");
  }
  const MatrixXd lr = cholesky(row_cov, "sample_matrix_normal row_cov");
  const MatrixXd lc = cholesky(col_cov, "sample_matrix_normal col_cov");
  const MatrixXd z = standard_normal_matrix(mean.rows(), mean.cols(), rng);
  return mean + lr * z * lc.transpose();
}

}  // namespace pgoc
