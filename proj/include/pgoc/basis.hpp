#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgoc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Feature map phi(x, u) used as the regressor of the state transition
/// x' = A phi(x, u) + v, with analytic partial derivatives for the
/// trajectory optimizer.
class Basis {
 public:
  virtual ~Basis() = default;

  virtual int output_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual std::string id() const = 0;

  virtual VectorXd eval(const VectorXd& x, const VectorXd& u) const = 0;
  /// d phi / d x, shape output_dim x state_dim.
  virtual MatrixXd jacobian_state(const VectorXd& x, const VectorXd& u) const = 0;
  /// d phi / d u, shape output_dim x input_dim.
  virtual MatrixXd jacobian_input(const VectorXd& x, const VectorXd& u) const = 0;

  /// Both jacobians written into caller-provided storage; the optimizer's hot
  /// loops use this to avoid temporaries.
  virtual void jacobians_into(const VectorXd& x, const VectorXd& u, MatrixXd& jx,
                              MatrixXd& ju) const {
    jx = jacobian_state(x, u);
    ju = jacobian_input(x, u);
  }
};

using BasisPtr = std::shared_ptr<const Basis>;

namespace detail {

inline void check_basis_args(const Basis& b, const VectorXd& x, const VectorXd& u) {
  if (x.size() != b.state_dim() || u.size() != b.input_dim()) {
    throw std::invalid_argument(b.id() + ": argument dimensions do not match basis");
  }
}

// phi(x, u) = [x1, x2, u, cos(3 x1) x2, sin(2 x2) u]
class KnownBasisV5 final : public Basis {
 public:
  int output_dim() const override { return 5; }
  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  std::string id() const override { return "known_v5"; }

  VectorXd eval(const VectorXd& x, const VectorXd& u) const override {
    check_basis_args(*this, x, u);
    VectorXd phi(5);
    phi << x(0), x(1), u(0), std::cos(3.0 * x(0)) * x(1), std::sin(2.0 * x(1)) * u(0);
    return phi;
  }

  MatrixXd jacobian_state(const VectorXd& x, const VectorXd& u) const override {
    check_basis_args(*this, x, u);
    MatrixXd j = MatrixXd::Zero(5, 2);
    j(0, 0) = 1.0;
    j(1, 1) = 1.0;
    j(3, 0) = -3.0 * std::sin(3.0 * x(0)) * x(1);
    j(3, 1) = std::cos(3.0 * x(0));
    j(4, 1) = 2.0 * std::cos(2.0 * x(1)) * u(0);
    return j;
  }

  MatrixXd jacobian_input(const VectorXd& x, const VectorXd& u) const override {
    check_basis_args(*this, x, u);
    MatrixXd j = MatrixXd::Zero(5, 1);
    j(2, 0) = 1.0;
    j(4, 0) = std::sin(2.0 * x(1));
    return j;
  }

  void jacobians_into(const VectorXd& x, const VectorXd& u, MatrixXd& jx,
                      MatrixXd& ju) const override {
    jx.setZero(5, 2);
    ju.setZero(5, 1);
    jx(0, 0) = 1.0;
    jx(1, 1) = 1.0;
    jx(3, 0) = -3.0 * std::sin(3.0 * x(0)) * x(1);
    jx(3, 1) = std::cos(3.0 * x(0));
    jx(4, 1) = 2.0 * std::cos(2.0 * x(1)) * u(0);
    ju(2, 0) = 1.0;
    ju(4, 0) = std::sin(2.0 * x(1));
  }
};

}  // namespace detail

/// The five hand-crafted features of the two-state benchmark system.
inline BasisPtr known_basis_v5() { return std::make_shared<detail::KnownBasisV5>(); }

/// Hyperparameters of the reduced-rank GP feature construction: isotropic
/// squared-exponential kernel, Laplacian eigenfunctions on the box
/// [-L_x1, L_x1] x [-L_x2, L_x2] x [-L_u, L_u].
struct ReducedRankGPConfig {
  double lengthscale = 2.0;
  double signal_std = 100.0;
  int modes_x1 = 5;
  int modes_x2 = 5;
  int modes_u = 5;
  double half_width_x1 = 20.0;
  double half_width_x2 = 20.0;
  double half_width_u = 10.0;

  void validate() const {
    if (!(lengthscale > 0.0) || !(signal_std > 0.0)) {
      throw std::invalid_argument("ReducedRankGPConfig: lengthscale and signal_std must be positive");
    }
    if (modes_x1 < 1 || modes_x2 < 1 || modes_u < 1) {
      throw std::invalid_argument("ReducedRankGPConfig: mode counts must be >= 1");
    }
    if (!(half_width_x1 > 0.0) || !(half_width_x2 > 0.0) || !(half_width_u > 0.0)) {
      throw std::invalid_argument("ReducedRankGPConfig: half widths must be positive");
    }
  }
};

/// Dirichlet-Laplacian eigenvalue for mode j on [-half_width, half_width].
inline double laplacian_eigenvalue(int mode, double half_width) {
  const double a = std::numbers::pi * mode / (2.0 * half_width);
  return a * a;
}

/// Spectral density of the isotropic squared-exponential kernel in dimension D.
inline double se_spectral_density(double omega, double signal_std, double lengthscale, int dim) {
  return signal_std * signal_std * std::pow(2.0 * std::numbers::pi, 0.5 * dim) *
         std::pow(lengthscale, dim) * std::exp(-0.5 * omega * omega * lengthscale * lengthscale);
}

namespace detail {

// Tensor products of per-dimension sine eigenfunctions,
//   phi_j(z) = prod_d L_d^{-1/2} sin(pi j_d (z_d + L_d) / (2 L_d)),
// ordered lexicographically over (j_x1, j_x2, j_u). Outside the box the sine
// extension is evaluated as-is; the GP approximation degrades there but the
// evaluator stays smooth for the optimizer.
class HilbertSpaceBasis final : public Basis {
 public:
  explicit HilbertSpaceBasis(const ReducedRankGPConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    modes_ = {cfg.modes_x1, cfg.modes_x2, cfg.modes_u};
    widths_ = {cfg.half_width_x1, cfg.half_width_x2, cfg.half_width_u};
    n_a_ = cfg.modes_x1 * cfg.modes_x2 * cfg.modes_u;
  }

  int output_dim() const override { return n_a_; }
  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  std::string id() const override { return "reduced_rank_gp"; }

  VectorXd eval(const VectorXd& x, const VectorXd& u) const override {
    check_basis_args(*this, x, u);
    const std::array<double, 3> z = {x(0), x(1), u(0)};
    std::array<std::vector<double>, 3> s;
    for (int d = 0; d < 3; ++d) s[d] = dim_values(d, z[d], false);
    VectorXd phi(n_a_);
    int idx = 0;
    for (int j0 = 0; j0 < modes_[0]; ++j0)
      for (int j1 = 0; j1 < modes_[1]; ++j1)
        for (int j2 = 0; j2 < modes_[2]; ++j2) phi(idx++) = s[0][j0] * s[1][j1] * s[2][j2];
    return phi;
  }

  MatrixXd jacobian_state(const VectorXd& x, const VectorXd& u) const override {
    return jacobian(x, u).leftCols(2);
  }

  MatrixXd jacobian_input(const VectorXd& x, const VectorXd& u) const override {
    return jacobian(x, u).rightCols(1);
  }

  /// Diagonal of the prior coefficient covariance: the kernel spectral density
  /// evaluated at the square root of each tensor eigenvalue.
  VectorXd prior_coefficient_variances() const {
    VectorXd v(n_a_);
    int idx = 0;
    for (int j0 = 1; j0 <= modes_[0]; ++j0)
      for (int j1 = 1; j1 <= modes_[1]; ++j1)
        for (int j2 = 1; j2 <= modes_[2]; ++j2) {
          const double lambda = laplacian_eigenvalue(j0, widths_[0]) +
                                laplacian_eigenvalue(j1, widths_[1]) +
                                laplacian_eigenvalue(j2, widths_[2]);
          v(idx++) = se_spectral_density(std::sqrt(lambda), cfg_.signal_std, cfg_.lengthscale, 3);
        }
    return v;
  }

 private:
  // Per-dimension factors sin(a_j (z + L)) / sqrt(L), or their derivatives
  // a_j cos(a_j (z + L)) / sqrt(L).
  std::vector<double> dim_values(int d, double z, bool derivative) const {
    std::vector<double> out(modes_[d]);
    const double l = widths_[d];
    const double norm = 1.0 / std::sqrt(l);
    for (int j = 1; j <= modes_[d]; ++j) {
      const double a = std::numbers::pi * j / (2.0 * l);
      const double arg = a * (z + l);
      out[j - 1] = norm * (derivative ? a * std::cos(arg) : std::sin(arg));
    }
    return out;
  }

  MatrixXd jacobian(const VectorXd& x, const VectorXd& u) const {
    check_basis_args(*this, x, u);
    const std::array<double, 3> z = {x(0), x(1), u(0)};
    std::array<std::vector<double>, 3> s, ds;
    for (int d = 0; d < 3; ++d) {
      s[d] = dim_values(d, z[d], false);
      ds[d] = dim_values(d, z[d], true);
    }
    MatrixXd j(n_a_, 3);
    int idx = 0;
    for (int j0 = 0; j0 < modes_[0]; ++j0)
      for (int j1 = 0; j1 < modes_[1]; ++j1)
        for (int j2 = 0; j2 < modes_[2]; ++j2) {
          j(idx, 0) = ds[0][j0] * s[1][j1] * s[2][j2];
          j(idx, 1) = s[0][j0] * ds[1][j1] * s[2][j2];
          j(idx, 2) = s[0][j0] * s[1][j1] * ds[2][j2];
          ++idx;
        }
    return j;
  }

  ReducedRankGPConfig cfg_;
  std::array<int, 3> modes_{};
  std::array<double, 3> widths_{};
  int n_a_ = 0;
};

}  // namespace detail

struct ReducedRankGPBasis {
  BasisPtr basis;
  /// Diagonal entries of the matrix-normal prior right covariance V.
  VectorXd prior_coefficient_variances;
};

/// Reduced-rank GP feature map plus the induced diagonal prior covariance.
inline ReducedRankGPBasis reduced_rank_gp(const ReducedRankGPConfig& config) {
  auto basis = std::make_shared<detail::HilbertSpaceBasis>(config);
  VectorXd v = basis->prior_coefficient_variances();
  return ReducedRankGPBasis{std::move(basis), std::move(v)};
}

}  // namespace pgoc
