#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "pgoc/guarantees.hpp"
#include "pgoc/ocp.hpp"
#include "pgoc/plant.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace pgoc;

CostSpec quadratic_io_cost() {
  // c(u, y) = u^T u + 0.5 y^T y, c_H(y) = 0.25 y^T y; exercises every
  // gradient path of the adjoint.
  CostSpec c;
  c.stage = [](const VectorXd& u, const VectorXd& y) {
    return u.squaredNorm() + 0.5 * y.squaredNorm();
  };
  c.terminal = [](const VectorXd& y) { return 0.25 * y.squaredNorm(); };
  c.stage_grad_input = [](const VectorXd& u, const VectorXd&) -> VectorXd { return 2.0 * u; };
  c.stage_grad_output = [](const VectorXd&, const VectorXd& y) -> VectorXd { return y; };
  c.terminal_grad = [](const VectorXd& y) -> VectorXd { return 0.5 * y; };
  return c;
}

// Posterior-like scenario: coefficients tightly clustered around the true
// plant and initial states clustered near a common point, the way scenario
// sets drawn from an identified posterior actually look.
Scenario benchmark_scenario(RngStream& rng, int horizon, double coeff_jitter = 0.02,
                            double noise_scale = 0.05) {
  MatrixXd a = TrigPlant::true_coefficients();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) a(i, j) += coeff_jitter * rng.normal();
  MatrixXd q = 0.01 * MatrixXd::Identity(2, 2);
  BasisStateSpaceModel model(a, q, known_basis_v5(),
                             LinearObservation::component(0, 2, 1, 0.1));
  MatrixXd v(horizon + 1, 2), w(horizon + 1, 1);
  for (int t = 0; t <= horizon; ++t) {
    v(t, 0) = noise_scale * rng.normal();
    v(t, 1) = noise_scale * rng.normal();
    w(t, 0) = noise_scale * rng.normal();
  }
  VectorXd x0(2);
  x0 << 0.3 + 0.15 * rng.normal(), 0.3 + 0.15 * rng.normal();
  return Scenario(model, x0, v, w);
}

ScenarioOCP benchmark_problem(int k, int horizon, unsigned seed,
                              double bound = 1.0, int t0 = 10, int t1 = 15,
                              double u_max = 4.0) {
  RngStream rng(seed);
  ScenarioOCP p;
  for (int i = 0; i < k; ++i) p.scenarios.push_back(benchmark_scenario(rng, horizon));
  p.cost = CostSpec::quadratic_input();
  p.output_constraints = {OutputConstraint{0, t0, t1, bound, true}};
  p.input_lower = VectorXd::Constant(1, -u_max);
  p.input_upper = VectorXd::Constant(1, u_max);
  p.horizon = horizon;
  return p;
}

TEST(Objective, ZeroCostSpecGivesZero) {
  ScenarioOCP p = benchmark_problem(3, 10, 1, 1.0, 4, 7);
  p.cost.stage = [](const VectorXd&, const VectorXd&) { return 0.0; };
  p.cost.terminal = [](const VectorXd&) { return 0.0; };
  EXPECT_EQ(objective(p, MatrixXd::Constant(11, 1, 0.7)), 0.0);
}

TEST(Objective, IdenticalScenariosEqualSingleCost) {
  RngStream rng(2);
  Scenario sc = benchmark_scenario(rng, 8);
  ScenarioOCP p;
  p.scenarios = {sc, sc, sc, sc};
  p.cost = quadratic_io_cost();
  p.input_lower = ScenarioOCP::unbounded(1, -1.0);
  p.input_upper = ScenarioOCP::unbounded(1, +1.0);
  p.horizon = 8;
  const MatrixXd u = MatrixXd::Constant(9, 1, 0.3);
  const double single = rollout_inputs(sc, u, p.cost).cost;
  EXPECT_NEAR(objective(p, u), single, 1e-12 * std::abs(single));
}

TEST(Objective, InputOnlyCostIndependentOfScenarios) {
  ScenarioOCP p = benchmark_problem(5, 100, 3);
  const MatrixXd u = MatrixXd::Constant(101, 1, 1.0);
  EXPECT_NEAR(objective(p, u), 101.0, 1e-12);
}

TEST(ObjectiveGradient, DecoupledQuadratic) {
  // Zero dynamics: gradient of the mean input cost is exactly 2u.
  BasisStateSpaceModel model(MatrixXd::Zero(2, 5), MatrixXd::Zero(2, 2), known_basis_v5(),
                             LinearObservation::component(0, 2, 1, 0.0));
  const int h = 6;
  ScenarioOCP p;
  p.scenarios = {Scenario(model, VectorXd::Zero(2), MatrixXd::Zero(h + 1, 2),
                          MatrixXd::Zero(h + 1, 1))};
  p.cost = CostSpec::quadratic_input();
  p.input_lower = ScenarioOCP::unbounded(1, -1.0);
  p.input_upper = ScenarioOCP::unbounded(1, +1.0);
  p.horizon = h;
  MatrixXd u(h + 1, 1);
  for (int t = 0; t <= h; ++t) u(t, 0) = 0.1 * t - 0.3;
  const VectorXd g = objective_gradient(p, u);
  for (int t = 0; t <= h; ++t) EXPECT_NEAR(g(t), 2.0 * u(t, 0), 1e-14);
}

VectorXd fd_gradient(const ScenarioOCP& p, const MatrixXd& u, double h_step) {
  VectorXd g(u.size());
  MatrixXd up = u, um = u;
  for (int t = 0; t < u.rows(); ++t) {
    for (int j = 0; j < u.cols(); ++j) {
      up(t, j) += h_step;
      um(t, j) -= h_step;
      g(t * u.cols() + j) = (objective(p, up) - objective(p, um)) / (2.0 * h_step);
      up(t, j) = u(t, j);
      um(t, j) = u(t, j);
    }
  }
  return g;
}

TEST(ObjectiveGradient, MatchesFiniteDifferencesOnRandomProblems) {
  for (unsigned seed = 1; seed <= 20; ++seed) {
    RngStream rng(seed);
    ScenarioOCP p;
    const int h = 5;
    for (int i = 0; i < 3; ++i) p.scenarios.push_back(benchmark_scenario(rng, h, 0.1, 0.1));
    p.cost = quadratic_io_cost();
    p.input_lower = ScenarioOCP::unbounded(1, -1.0);
    p.input_upper = ScenarioOCP::unbounded(1, +1.0);
    p.horizon = h;
    MatrixXd u(h + 1, 1);
    for (int t = 0; t <= h; ++t) u(t, 0) = rng.normal();

    const VectorXd g = objective_gradient(p, u);
    const VectorXd g_fd = fd_gradient(p, u, 1e-6);
    const double scale = std::max(1.0, g_fd.cwiseAbs().maxCoeff());
    EXPECT_LE((g - g_fd).cwiseAbs().maxCoeff() / scale, 1e-5) << "seed " << seed;
  }
}

TEST(AugmentedLagrangian, GradientMatchesFiniteDifferences) {
  ScenarioOCP p = benchmark_problem(3, 8, 5, 0.5, 2, 6);
  const std::vector<bool> active(p.scenarios.size(), true);
  detail::AugmentedLagrangian al(p, active);
  VectorXd lambda(al.num_constraints());
  RngStream rng(7);
  for (int i = 0; i < lambda.size(); ++i) lambda(i) = std::abs(rng.normal());
  const double rho = 7.0;

  MatrixXd u(9, 1);
  for (int t = 0; t <= 8; ++t) u(t, 0) = 0.5 * rng.normal();

  MatrixXd grad;
  al.evaluate(u, lambda, rho, nullptr, &grad);

  MatrixXd up = u, um = u;
  for (int t = 0; t <= 8; ++t) {
    const double h_step = 1e-6;
    up(t, 0) += h_step;
    um(t, 0) -= h_step;
    const double fp = al.evaluate(up, lambda, rho, nullptr, nullptr);
    const double fm = al.evaluate(um, lambda, rho, nullptr, nullptr);
    const double fd = (fp - fm) / (2.0 * h_step);
    EXPECT_NEAR(grad(t, 0), fd, 1e-5 * std::max(1.0, std::abs(fd))) << "t=" << t;
    up(t, 0) = u(t, 0);
    um(t, 0) = u(t, 0);
  }
}

TEST(Solve, UnconstrainedQuadraticGivesZero) {
  ScenarioOCP p = benchmark_problem(4, 12, 11);
  p.output_constraints.clear();
  const Solution sol = solve(p, SolverConfig{});
  EXPECT_TRUE(sol.converged);
  EXPECT_TRUE(sol.feasible);
  EXPECT_LE(sol.u_star.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(sol.objective, 0.0, 1e-12);
}

// Scalar integrator x+ = x + u, y = x, constraint y_2 >= 1, cost sum u^2:
// the effort spreads equally over the two effective steps. Verified against
// a dense grid over (u_0, u_1) evaluated by honest rollouts.
TEST(Solve, TwoStepIntegratorMatchesGridOracle) {
  const auto basis = std::make_shared<oracles::LinearBasis>(1, 1, true);
  MatrixXd a(1, 2);
  a << 1.0, 1.0;
  MatrixXd q(1, 1), c(1, 1), d(1, 1), r(1, 1);
  q << 1e-12;
  c << 1.0;
  d << 0.0;
  r << 0.0;
  BasisStateSpaceModel model(a, q, basis, LinearObservation(c, d, r));
  const int h = 2;
  Scenario sc(model, VectorXd::Zero(1), MatrixXd::Zero(h + 1, 1), MatrixXd::Zero(h + 1, 1));

  ScenarioOCP p;
  p.scenarios = {sc};
  p.cost = CostSpec::quadratic_input();
  p.output_constraints = {OutputConstraint{0, 2, 2, 1.0, true}};
  p.input_lower = VectorXd::Constant(1, -10.0);
  p.input_upper = VectorXd::Constant(1, 10.0);
  p.horizon = h;

  const Solution sol = solve(p, SolverConfig{});
  ASSERT_TRUE(sol.converged);
  ASSERT_TRUE(sol.feasible);

  // Brute force on (u0, u1) at resolution 1e-3 with u2 = 0.
  double best = 1e300, best_u0 = 0.0, best_u1 = 0.0;
  MatrixXd u_try = MatrixXd::Zero(h + 1, 1);
  for (int i = 0; i <= 1000; ++i) {
    for (int j = 0; j <= 1000; ++j) {
      const double u0 = i * 1e-3, u1 = j * 1e-3;
      u_try(0, 0) = u0;
      u_try(1, 0) = u1;
      const RolloutResult rr = rollout_inputs(sc, u_try, p.cost);
      if (rr.outputs(2, 0) >= 1.0 && rr.cost < best) {
        best = rr.cost;
        best_u0 = u0;
        best_u1 = u1;
      }
    }
  }
  EXPECT_NEAR(best_u0, 0.5, 2e-3);
  EXPECT_NEAR(best_u1, 0.5, 2e-3);
  EXPECT_NEAR(sol.u_star(0, 0), best_u0, 2e-3);
  EXPECT_NEAR(sol.u_star(1, 0), best_u1, 2e-3);
  EXPECT_NEAR(sol.u_star(2, 0), 0.0, 1e-6);
  EXPECT_NEAR(sol.objective, 0.5, 1e-5);
}

TEST(Solve, InputBoxHeldExactly) {
  ScenarioOCP p = benchmark_problem(4, 20, 13, 2.0, 8, 14, 0.6);
  const Solution sol = solve(p, SolverConfig{});
  for (int t = 0; t <= p.horizon; ++t) {
    EXPECT_LE(std::abs(sol.u_star(t, 0)), 0.6);
  }
  // The bound must actually bite somewhere for this to be a real check.
  EXPECT_GE(sol.u_star.cwiseAbs().maxCoeff(), 0.6 - 1e-9);
}

TEST(Solve, DeterministicAndPermutationInvariant) {
  ScenarioOCP p = benchmark_problem(8, 25, 17);
  const Solution s1 = solve(p, SolverConfig{});
  const Solution s2 = solve(p, SolverConfig{});
  ASSERT_TRUE(s1.converged);
  EXPECT_EQ((s1.u_star - s2.u_star).cwiseAbs().maxCoeff(), 0.0);

  ScenarioOCP shuffled = p;
  std::mt19937 gen(99);
  std::shuffle(shuffled.scenarios.begin(), shuffled.scenarios.end(), gen);
  const Solution s3 = solve(shuffled, SolverConfig{});
  EXPECT_EQ((s1.u_star - s3.u_star).cwiseAbs().maxCoeff(), 0.0);

  ScenarioOCP reversed = p;
  std::reverse(reversed.scenarios.begin(), reversed.scenarios.end());
  const Solution s4 = solve(reversed, SolverConfig{});
  EXPECT_EQ((s1.u_star - s4.u_star).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Solve, AppendingSlackScenarioLeavesSolution) {
  ScenarioOCP p = benchmark_problem(8, 25, 19);
  const Solution base = solve(p, SolverConfig{});
  ASSERT_TRUE(base.converged);
  ASSERT_TRUE(base.feasible);

  // Duplicate the scenario with the most slack at the optimum.
  int slackest = 0;
  for (int k = 1; k < 8; ++k) {
    if (base.scenario_residuals(k) < base.scenario_residuals(slackest)) slackest = k;
  }
  ASSERT_LT(base.scenario_residuals(slackest), -1e-3);
  ScenarioOCP grown = p;
  grown.scenarios.push_back(p.scenarios[slackest]);
  const Solution s2 = solve(grown, SolverConfig{});
  EXPECT_LE((base.u_star - s2.u_star).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Solve, UnconvergedFlaggedNotThrown) {
  ScenarioOCP p = benchmark_problem(4, 20, 23);
  SolverConfig cfg;
  cfg.max_outer_iterations = 1;
  cfg.max_inner_iterations = 2;
  const Solution sol = solve(p, cfg);
  EXPECT_FALSE(sol.converged);
}

TEST(GreedySupport, AllSlackConstraintsGiveEmptySupport) {
  ScenarioOCP p = benchmark_problem(4, 15, 29, -1e6, 5, 8);  // y >= -1e6: never active
  const Solution sol = solve(p, SolverConfig{});
  ASSERT_TRUE(sol.converged);
  const GreedySupportResult g = greedy_support(p, sol.u_star, SolverConfig{});
  EXPECT_TRUE(g.support.empty());
  EXPECT_LE(g.verification_delta, 1e-6);
}

TEST(GreedySupport, DuplicateScenarioCollapsesToOne) {
  RngStream rng(31);
  Scenario sc = benchmark_scenario(rng, 12);
  ScenarioOCP p;
  p.scenarios = {sc, sc};
  p.cost = CostSpec::quadratic_input();
  p.output_constraints = {OutputConstraint{0, 5, 8, 1.0, true}};
  p.input_lower = VectorXd::Constant(1, -4.0);
  p.input_upper = VectorXd::Constant(1, 4.0);
  p.horizon = 12;
  const Solution sol = solve(p, SolverConfig{});
  ASSERT_TRUE(sol.converged);
  ASSERT_TRUE(sol.feasible);
  const GreedySupportResult g = greedy_support(p, sol.u_star, SolverConfig{});
  EXPECT_LE(g.support.size(), 1u);
}

TEST(GreedySupport, SupportReproducesSolution) {
  ScenarioOCP p = benchmark_problem(6, 20, 37, 1.2, 8, 12);
  const Solution sol = solve(p, SolverConfig{});
  ASSERT_TRUE(sol.converged);
  ASSERT_TRUE(sol.feasible);
  const GreedySupportResult g = greedy_support(p, sol.u_star, SolverConfig{});
  EXPECT_LT(g.support.size(), p.scenarios.size());
  EXPECT_LE(g.verification_delta, 1e-6);
  EXPECT_EQ(g.solves, static_cast<int>(p.scenarios.size()) + 1);

  // Independent re-check of the defining property.
  std::vector<bool> active(p.scenarios.size(), false);
  for (int idx : g.support) active[idx] = true;
  const Solution reduced = solve_with_active_constraints(p, SolverConfig{}, active);
  EXPECT_LE((reduced.u_star - sol.u_star).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ScenarioOCP, ValidatesWindows) {
  ScenarioOCP p = benchmark_problem(2, 10, 41);
  p.output_constraints = {OutputConstraint{0, 5, 11, 1.0, true}};  // past horizon
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.output_constraints = {OutputConstraint{3, 1, 2, 1.0, true}};  // no such output
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

}  // namespace
