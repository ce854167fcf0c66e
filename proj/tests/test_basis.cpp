#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "pgoc/basis.hpp"
#include "pgoc/rng.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace pgoc;

// Central finite differences of a basis evaluation, the reference every
// analytic jacobian is checked against.
MatrixXd fd_jacobian_state(const Basis& b, const VectorXd& x, const VectorXd& u, double h) {
  MatrixXd j(b.output_dim(), b.state_dim());
  for (int d = 0; d < b.state_dim(); ++d) {
    VectorXd xp = x, xm = x;
    xp(d) += h;
    xm(d) -= h;
    j.col(d) = (b.eval(xp, u) - b.eval(xm, u)) / (2.0 * h);
  }
  return j;
}

MatrixXd fd_jacobian_input(const Basis& b, const VectorXd& x, const VectorXd& u, double h) {
  MatrixXd j(b.output_dim(), b.input_dim());
  for (int d = 0; d < b.input_dim(); ++d) {
    VectorXd up = u, um = u;
    up(d) += h;
    um(d) -= h;
    j.col(d) = (b.eval(x, up) - b.eval(x, um)) / (2.0 * h);
  }
  return j;
}

void check_jacobians(const Basis& b, unsigned seed) {
  RngStream rng(seed);
  for (int i = 0; i < 100; ++i) {
    VectorXd x(b.state_dim()), u(b.input_dim());
    for (int d = 0; d < b.state_dim(); ++d) x(d) = 4.0 * (rng.uniform01() - 0.5);
    for (int d = 0; d < b.input_dim(); ++d) u(d) = 4.0 * (rng.uniform01() - 0.5);
    const MatrixXd jx = b.jacobian_state(x, u);
    const MatrixXd ju = b.jacobian_input(x, u);
    const MatrixXd jx_fd = fd_jacobian_state(b, x, u, 1e-6);
    const MatrixXd ju_fd = fd_jacobian_input(b, x, u, 1e-6);
    const double scale_x = std::max(1.0, jx_fd.cwiseAbs().maxCoeff());
    const double scale_u = std::max(1.0, ju_fd.cwiseAbs().maxCoeff());
    ASSERT_LE((jx - jx_fd).cwiseAbs().maxCoeff() / scale_x, 1e-5);
    ASSERT_LE((ju - ju_fd).cwiseAbs().maxCoeff() / scale_u, 1e-5);
  }
}

TEST(KnownBasis, HandEvaluatedPoints) {
  const auto b = known_basis_v5();
  EXPECT_EQ(b->output_dim(), 5);
  const VectorXd zero2 = VectorXd::Zero(2);
  const VectorXd zero1 = VectorXd::Zero(1);

  EXPECT_EQ(b->eval(zero2, zero1).cwiseAbs().maxCoeff(), 0.0);

  VectorXd x = (VectorXd(2) << 0.0, 1.0).finished();
  VectorXd phi = b->eval(x, zero1);
  EXPECT_DOUBLE_EQ(phi(0), 0.0);
  EXPECT_DOUBLE_EQ(phi(1), 1.0);
  EXPECT_DOUBLE_EQ(phi(2), 0.0);
  EXPECT_DOUBLE_EQ(phi(3), 1.0);  // cos(0) * 1
  EXPECT_DOUBLE_EQ(phi(4), 0.0);

  VectorXd u = VectorXd::Constant(1, 2.0);
  phi = b->eval(zero2, u);
  EXPECT_DOUBLE_EQ(phi(0), 0.0);
  EXPECT_DOUBLE_EQ(phi(1), 0.0);
  EXPECT_DOUBLE_EQ(phi(2), 2.0);
  EXPECT_DOUBLE_EQ(phi(3), 0.0);
  EXPECT_DOUBLE_EQ(phi(4), 0.0);  // sin(0) * 2
}

TEST(KnownBasis, JacobiansMatchFiniteDifferences) { check_jacobians(*known_basis_v5(), 17); }

TEST(ReducedRankGP, BenchmarkConfigDimension) {
  const auto [basis, prior_v] = reduced_rank_gp(ReducedRankGPConfig{});
  EXPECT_EQ(basis->output_dim(), 125);
  EXPECT_EQ(prior_v.size(), 125);
}

TEST(ReducedRankGP, UnitEigenvalue) {
  // One mode on [-pi/2, pi/2]: lambda = (pi / (2 * pi/2))^2 = 1.
  EXPECT_NEAR(laplacian_eigenvalue(1, std::numbers::pi / 2.0), 1.0, 1e-15);
}

TEST(ReducedRankGP, PriorVariancesPositiveAndMonotone) {
  ReducedRankGPConfig cfg;
  const auto [basis, v] = reduced_rank_gp(cfg);
  EXPECT_GT(v.minCoeff(), 0.0);
  // Componentwise larger multi-indices have larger eigenvalues and therefore
  // smaller spectral density. Lexicographic layout: index = ((j1-1)*5 + (j2-1))*5 + (j3-1).
  auto flat = [](int j1, int j2, int j3) { return ((j1 - 1) * 5 + (j2 - 1)) * 5 + (j3 - 1); };
  for (int j1 = 1; j1 <= 5; ++j1) {
    for (int j2 = 1; j2 <= 5; ++j2) {
      for (int j3 = 1; j3 <= 5; ++j3) {
        if (j1 < 5) {
          EXPECT_GT(v(flat(j1, j2, j3)), v(flat(j1 + 1, j2, j3)));
        }
        if (j2 < 5) {
          EXPECT_GT(v(flat(j1, j2, j3)), v(flat(j1, j2 + 1, j3)));
        }
        if (j3 < 5) {
          EXPECT_GT(v(flat(j1, j2, j3)), v(flat(j1, j2, j3 + 1)));
        }
      }
    }
  }
}

TEST(ReducedRankGP, SpectralDensityValue) {
  // S(omega) = s_f^2 (2 pi)^(3/2) l^3 exp(-omega^2 l^2 / 2) for D = 3.
  const double s = se_spectral_density(0.5, 100.0, 2.0, 3);
  const double expected = 1e4 * std::pow(2.0 * std::numbers::pi, 1.5) * 8.0 *
                          std::exp(-0.5 * 0.25 * 4.0);
  EXPECT_NEAR(s, expected, expected * 1e-12);
}

TEST(ReducedRankGP, EigenfunctionsOrthonormalByQuadrature) {
  // The tensor eigenfunctions factor per dimension, so the box integral of
  // phi_i phi_j is the product of one-dimensional Simpson quadratures.
  ReducedRankGPConfig cfg;
  cfg.modes_x1 = 3;
  cfg.modes_x2 = 3;
  cfg.modes_u = 3;
  const auto [basis, v] = reduced_rank_gp(cfg);

  const auto overlap_1d = [](int ji, int jj, double l) {
    const int n = 4000;  // Simpson with even interval count
    const double h = 2.0 * l / n;
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) {
      const double z = -l + k * h;
      const double fi = std::sin(std::numbers::pi * ji * (z + l) / (2.0 * l));
      const double fj = std::sin(std::numbers::pi * jj * (z + l) / (2.0 * l));
      const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
      acc += w * fi * fj;
    }
    return acc * h / 3.0 / l;  // includes both L^(-1/2) normalizations
  };

  const double widths[3] = {cfg.half_width_x1, cfg.half_width_x2, cfg.half_width_u};
  auto unflatten = [&](int idx, int out[3]) {
    out[2] = idx % 3 + 1;
    out[1] = (idx / 3) % 3 + 1;
    out[0] = idx / 9 + 1;
  };
  for (int i = 0; i < basis->output_dim(); ++i) {
    for (int j = i; j < basis->output_dim(); ++j) {
      int ji[3], jj[3];
      unflatten(i, ji);
      unflatten(j, jj);
      double integral = 1.0;
      for (int d = 0; d < 3; ++d) integral *= overlap_1d(ji[d], jj[d], widths[d]);
      EXPECT_NEAR(integral, i == j ? 1.0 : 0.0, 1e-3) << "pair " << i << "," << j;
    }
  }
}

TEST(ReducedRankGP, JacobiansMatchFiniteDifferences) {
  ReducedRankGPConfig cfg;
  cfg.modes_x1 = 4;
  cfg.modes_x2 = 3;
  cfg.modes_u = 2;
  check_jacobians(*reduced_rank_gp(cfg).basis, 23);
}

TEST(ReducedRankGP, ValidatesConfig) {
  ReducedRankGPConfig cfg;
  cfg.modes_x1 = 0;
  EXPECT_THROW(reduced_rank_gp(cfg), std::invalid_argument);
  cfg = ReducedRankGPConfig{};
  cfg.lengthscale = -1.0;
  EXPECT_THROW(reduced_rank_gp(cfg), std::invalid_argument);
}

}  // namespace
