#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgoc/errors.hpp"
#include "pgoc/model.hpp"
#include "pgoc/rollout.hpp"

namespace pgoc {

/// One-sided bound on an output component over an inclusive time window.
/// Satisfied when violation(y) <= 0.
struct OutputConstraint {
  int component = 0;
  int t_begin = 0;
  int t_end = 0;
  double bound = 0.0;
  bool is_lower = true;  // true: y >= bound, false: y <= bound

  double violation(double y) const { return is_lower ? bound - y : y - bound; }
};

/// Deterministic scenario optimal control problem: minimize the sample-average
/// cost over the input trajectory subject to per-scenario output constraints
/// and an elementwise input box.
struct ScenarioOCP {
  std::vector<Scenario> scenarios;
  CostSpec cost;
  std::vector<OutputConstraint> output_constraints;
  VectorXd input_lower;  // size n_u; -inf where absent
  VectorXd input_upper;  // size n_u; +inf where absent
  int horizon = 0;

  void validate() const {
    if (scenarios.empty()) throw std::invalid_argument("ScenarioOCP: no scenarios");
    const int n_u = static_cast<int>(scenarios.front().model.input_dim());
    for (const Scenario& s : scenarios) {
      if (s.horizon() != horizon) {
        throw std::invalid_argument("ScenarioOCP: scenario horizon mismatch");
      }
      if (s.model.input_dim() != n_u) {
        throw std::invalid_argument("ScenarioOCP: scenario input dimension mismatch");
      }
    }
    for (const OutputConstraint& c : output_constraints) {
      if (c.t_begin < 0 || c.t_end > horizon || c.t_begin > c.t_end) {
        throw std::invalid_argument("ScenarioOCP: constraint window outside [0, H]");
      }
      if (c.component < 0 || c.component >= scenarios.front().model.output_dim()) {
        throw std::invalid_argument("ScenarioOCP: constraint output component out of range");
      }
    }
    if (input_lower.size() != n_u || input_upper.size() != n_u) {
      throw std::invalid_argument("ScenarioOCP: input bounds must have size n_u");
    }
    if (((input_upper - input_lower).array() < 0.0).any()) {
      throw std::invalid_argument("ScenarioOCP: input_upper must dominate input_lower");
    }
  }

  int input_dim() const { return static_cast<int>(scenarios.front().model.input_dim()); }
  int decision_dim() const { return (horizon + 1) * input_dim(); }

  static VectorXd unbounded(int n_u, double sign) {
    return VectorXd::Constant(n_u, sign * std::numeric_limits<double>::infinity());
  }
};

struct SolverConfig {
  int max_outer_iterations = 40;
  int max_inner_iterations = 60;  // Newton iterations per outer solve
  double penalty_growth = 10.0;
  double initial_penalty = 10.0;
  double stationarity_tol = 1e-6;
  double constraint_tol = 1e-8;
  /// Flattened fixed initial guess; empty means all zeros. Keeping the guess
  /// fixed is part of the solver-as-deterministic-map contract.
  VectorXd initial_guess;

  void validate() const {
    if (max_outer_iterations < 1 || max_inner_iterations < 1) {
      throw std::invalid_argument("SolverConfig: iteration caps must be >= 1");
    }
    if (!(penalty_growth > 1.0) || !(initial_penalty > 0.0)) {
      throw std::invalid_argument("SolverConfig: penalty parameters out of range");
    }
    if (!(stationarity_tol > 0.0) || !(constraint_tol > 0.0)) {
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    }
  }
};

struct SolveLogEntry {
  int outer = 0;
  int inner_iterations = 0;
  double objective = 0.0;
  double max_violation = 0.0;
  double penalty = 0.0;
  double projected_gradient = 0.0;
};

struct Solution {
  MatrixXd u_star;                  // (H+1) x n_u
  double objective = 0.0;           // sample-average cost at u_star
  VectorXd scenario_residuals;      // per-scenario max constraint violation, original order
  double kkt_residual = 0.0;        // projected-gradient inf norm at termination
  std::vector<SolveLogEntry> iterations;
  bool feasible = false;
  bool converged = false;
};

namespace detail {

inline MatrixXd unflatten(const VectorXd& u, int horizon, int n_u) {
  MatrixXd m(horizon + 1, n_u);
  for (int t = 0; t <= horizon; ++t)
    for (int j = 0; j < n_u; ++j) m(t, j) = u(t * n_u + j);
  return m;
}

inline VectorXd flatten(const MatrixXd& u) {
  VectorXd v(u.rows() * u.cols());
  for (Eigen::Index t = 0; t < u.rows(); ++t)
    for (Eigen::Index j = 0; j < u.cols(); ++j) v(t * u.cols() + j) = u(t, j);
  return v;
}

// Forward rollout of one scenario, keeping states and outputs for the
// adjoint pass. No cost evaluation here.
struct ForwardPass {
  MatrixXd states;   // (H+2) x n_x
  MatrixXd outputs;  // (H+1) x n_y
};

inline void forward_pass(const Scenario& sc, const MatrixXd& u, ForwardPass& fp) {
  const BasisStateSpaceModel& model = sc.model;
  const int h = sc.horizon();
  fp.states.resize(h + 2, model.state_dim());
  fp.outputs.resize(h + 1, model.output_dim());
  VectorXd x = sc.initial_state;
  check_state(x, 0);
  fp.states.row(0) = x.transpose();
  for (int t = 0; t <= h; ++t) {
    const VectorXd u_t = u.row(t).transpose();
    fp.outputs.row(t) =
        (model.obs.eval(x, u_t) + sc.measurement_noise.row(t).transpose()).transpose();
    x = dynamics_mean(model, x, u_t) + sc.process_noise.row(t).transpose();
    check_state(x, t + 1);
    fp.states.row(t + 1) = x.transpose();
  }
}

// Reverse-time adjoint for one scenario. output_seed.row(t) must hold the
// derivative of the accumulated objective with respect to y_t; input_seed
// the direct derivative with respect to u_t. Adds the gradient to grad.
inline void adjoint_pass(const Scenario& sc, const MatrixXd& u, const ForwardPass& fp,
                         const MatrixXd& output_seed, const MatrixXd& input_seed,
                         MatrixXd& grad) {
  const BasisStateSpaceModel& model = sc.model;
  const int h = sc.horizon();
  VectorXd mu = VectorXd::Zero(model.state_dim());
  MatrixXd jx, ju;
  for (int t = h; t >= 0; --t) {
    const VectorXd x_t = fp.states.row(t).transpose();
    const VectorXd u_t = u.row(t).transpose();
    const VectorXd s_t = output_seed.row(t).transpose();
    model.basis->jacobians_into(x_t, u_t, jx, ju);
    grad.row(t) += (input_seed.row(t).transpose() + model.obs.D.transpose() * s_t +
                    (model.A * ju).transpose() * mu)
                       .transpose();
    mu = model.obs.C.transpose() * s_t + (model.A * jx).transpose() * mu;
  }
}

}  // namespace detail

/// Sample-average cost (1/K) sum_k J_k(u), accumulated in scenario index
/// order over the frozen scenarios.
inline double objective(const ScenarioOCP& problem, const MatrixXd& u) {
  problem.validate();
  if (static_cast<int>(u.rows()) != problem.horizon + 1 || u.cols() != problem.input_dim()) {
    throw std::invalid_argument("objective: u must be (H+1) x n_u");
  }
  double acc = 0.0;
  for (const Scenario& sc : problem.scenarios) {
    acc += rollout_inputs(sc, u, problem.cost).cost;
  }
  return acc / static_cast<double>(problem.scenarios.size());
}

/// Exact gradient of the sample-average cost by reverse-time adjoints,
/// averaged in scenario index order. Returned flattened, length (H+1)*n_u.
inline VectorXd objective_gradient(const ScenarioOCP& problem, const MatrixXd& u) {
  problem.validate();
  if (!problem.cost.has_gradients()) {
    throw std::invalid_argument("objective_gradient: cost gradients are required");
  }
  if (static_cast<int>(u.rows()) != problem.horizon + 1 || u.cols() != problem.input_dim()) {
    throw std::invalid_argument("objective_gradient: u must be (H+1) x n_u");
  }
  const int h = problem.horizon;
  const double inv_k = 1.0 / static_cast<double>(problem.scenarios.size());
  MatrixXd grad = MatrixXd::Zero(h + 1, problem.input_dim());
  detail::ForwardPass fp;
  for (const Scenario& sc : problem.scenarios) {
    detail::forward_pass(sc, u, fp);
    MatrixXd output_seed(h + 1, sc.model.output_dim());
    MatrixXd input_seed(h + 1, sc.model.input_dim());
    for (int t = 0; t <= h; ++t) {
      const VectorXd u_t = u.row(t).transpose();
      const VectorXd y_t = fp.outputs.row(t).transpose();
      output_seed.row(t) = (inv_k * problem.cost.stage_grad_output(u_t, y_t)).transpose();
      input_seed.row(t) = (inv_k * problem.cost.stage_grad_input(u_t, y_t)).transpose();
    }
    output_seed.row(h) +=
        (inv_k * problem.cost.terminal_grad(fp.outputs.row(h).transpose())).transpose();
    detail::adjoint_pass(sc, u, fp, output_seed, input_seed, grad);
  }
  return detail::flatten(grad);
}

namespace detail {

constexpr double kTieBreakRegularization = 1e-8;

// Augmented-Lagrangian evaluator over a fixed scenario set. Scenario terms
// are always accumulated in an order sorted by content digest, so the result
// is bit-identical under any permutation of the scenario list.
class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const ScenarioOCP& problem, const std::vector<bool>& active)
      : problem_(problem), active_(active) {
    const int k = static_cast<int>(problem.scenarios.size());
    order_.resize(k);
    std::iota(order_.begin(), order_.end(), 0);
    std::vector<std::uint64_t> digest(k);
    for (int i = 0; i < k; ++i) digest[i] = scenario_digest(problem.scenarios[i]);
    std::sort(order_.begin(), order_.end(), [&](int a, int b) {
      if (digest[a] != digest[b]) return digest[a] < digest[b];
      return a < b;  // only reachable for identical content, where order is immaterial
    });
    num_constraints_ = 0;
    constraints_per_scenario_ = 0;
    constraint_offsets_.clear();
    for (const OutputConstraint& c : problem.output_constraints) {
      constraint_offsets_.push_back(constraints_per_scenario_);
      constraints_per_scenario_ += c.t_end - c.t_begin + 1;
    }
    for (int i : order_) {
      if (active_[i]) num_constraints_ += constraints_per_scenario_;
    }
  }

  int num_constraints() const { return num_constraints_; }

  /// Uniform relaxation of every constraint bound (continuation stages solve
  /// g(u) <= offset instead of g(u) <= 0); zero restores the true problem.
  void set_bound_offset(double offset) { bound_offset_ = offset; }
  double bound_offset() const { return bound_offset_; }

  // Value of the minimized function: mean cost + tie-break regularization +
  // multiplier penalty terms. Optionally fills the constraint values g (in
  // canonical constraint order) and the gradient.
  double evaluate(const MatrixXd& u, const VectorXd& lambda, double rho, VectorXd* g_out,
                  MatrixXd* grad_out) const {
    const int h = problem_.horizon;
    const double inv_k = 1.0 / static_cast<double>(problem_.scenarios.size());
    double value = 0.0;
    if (grad_out) grad_out->setZero(h + 1, problem_.input_dim());
    int cidx = 0;
    for (int i : order_) {
      const Scenario& sc = problem_.scenarios[i];
      forward_pass(sc, u, fp_);
      double stage_sum = 0.0;
      for (int t = 0; t <= h; ++t) {
        stage_sum +=
            problem_.cost.stage(u.row(t).transpose(), fp_.outputs.row(t).transpose());
      }
      stage_sum += problem_.cost.terminal(fp_.outputs.row(h).transpose());
      value += inv_k * stage_sum;

      MatrixXd output_seed, input_seed;
      if (grad_out) {
        output_seed.setZero(h + 1, sc.model.output_dim());
        input_seed.setZero(h + 1, sc.model.input_dim());
        for (int t = 0; t <= h; ++t) {
          const VectorXd u_t = u.row(t).transpose();
          const VectorXd y_t = fp_.outputs.row(t).transpose();
          output_seed.row(t) = (inv_k * problem_.cost.stage_grad_output(u_t, y_t)).transpose();
          input_seed.row(t) = (inv_k * problem_.cost.stage_grad_input(u_t, y_t)).transpose();
        }
        output_seed.row(h) +=
            (inv_k * problem_.cost.terminal_grad(fp_.outputs.row(h).transpose())).transpose();
      }

      if (active_[i]) {
        for (const OutputConstraint& c : problem_.output_constraints) {
          for (int t = c.t_begin; t <= c.t_end; ++t) {
            const double g = c.violation(fp_.outputs(t, c.component)) - bound_offset_;
            if (g_out) (*g_out)(cidx) = g;
            const double shifted = lambda(cidx) + rho * g;
            const double m = std::max(0.0, shifted);
            value += (m * m - lambda(cidx) * lambda(cidx)) / (2.0 * rho);
            if (grad_out && m > 0.0) {
              output_seed(t, c.component) += c.is_lower ? -m : m;
            }
            ++cidx;
          }
        }
      }

      if (grad_out) adjoint_pass(sc, u, fp_, output_seed, input_seed, *grad_out);
    }
    const VectorXd uf = flatten(u);
    value += kTieBreakRegularization * uf.squaredNorm();
    if (grad_out) {
      for (int t = 0; t <= h; ++t)
        for (int j = 0; j < problem_.input_dim(); ++j)
          (*grad_out)(t, j) += 2.0 * kTieBreakRegularization * u(t, j);
    }
    return value;
  }

  // Value, gradient and Gauss-Newton Hessian of the minimized function.
  //
  // The output sensitivities dy_t/du come from one forward recursion per
  // scenario (S_{t+1} = A J_x S_t + A J_u E_t), which makes the exact
  // constraint-curvature part of the Hessian affordable: the hinge terms
  // contribute psi'' * (dy/du)^T (dy/du) on their window rows. Cost curvature
  // uses the optional CostSpec hints. The neglected term is the second
  // derivative of the dynamics weighted by constraint multipliers, which a
  // line search absorbs.
  double newton_model(const MatrixXd& u, const VectorXd& lambda, double rho, VectorXd& grad,
                      MatrixXd& hessian) const {
    const int h = problem_.horizon;
    const int n_u = problem_.input_dim();
    const int dim = (h + 1) * n_u;
    const double inv_k = 1.0 / static_cast<double>(problem_.scenarios.size());
    double value = 0.0;
    grad.setZero(dim);
    hessian.setZero(dim, dim);
    int cidx = 0;
    for (int i : order_) {
      const Scenario& sc = problem_.scenarios[i];
      const BasisStateSpaceModel& model = sc.model;
      const int n_x = static_cast<int>(model.state_dim());
      const int n_y = static_cast<int>(model.output_dim());
      forward_pass(sc, u, fp_);

      MatrixXd state_sens = MatrixXd::Zero(n_x, dim);  // dx_t/du
      MatrixXd out_sens(n_y, dim);                     // dy_t/du
      for (int t = 0; t <= h; ++t) {
        const VectorXd u_t = u.row(t).transpose();
        const VectorXd x_t = fp_.states.row(t).transpose();
        const VectorXd y_t = fp_.outputs.row(t).transpose();

        out_sens.noalias() = model.obs.C * state_sens;
        out_sens.middleCols(t * n_u, n_u) += model.obs.D;

        value += inv_k * problem_.cost.stage(u_t, y_t);
        const VectorXd cy = problem_.cost.stage_grad_output(u_t, y_t);
        const VectorXd cu = problem_.cost.stage_grad_input(u_t, y_t);
        grad.noalias() += inv_k * (out_sens.transpose() * cy);
        grad.segment(t * n_u, n_u) += inv_k * cu;
        if (problem_.cost.stage_hess_input) {
          hessian.block(t * n_u, t * n_u, n_u, n_u) +=
              inv_k * problem_.cost.stage_hess_input(u_t, y_t);
        }
        if (problem_.cost.stage_hess_output) {
          const MatrixXd cyy = problem_.cost.stage_hess_output(u_t, y_t);
          hessian.noalias() += out_sens.transpose() * (inv_k * cyy) * out_sens;
        }
        if (t == h) {
          value += inv_k * problem_.cost.terminal(y_t);
          grad.noalias() +=
              inv_k * (out_sens.transpose() * problem_.cost.terminal_grad(y_t));
          if (problem_.cost.terminal_hess) {
            hessian.noalias() +=
                out_sens.transpose() * (inv_k * problem_.cost.terminal_hess(y_t)) * out_sens;
          }
        }

        if (active_[i]) {
          for (std::size_t ci = 0; ci < problem_.output_constraints.size(); ++ci) {
            const OutputConstraint& c = problem_.output_constraints[ci];
            if (t < c.t_begin || t > c.t_end) continue;
            const int idx = cidx + constraint_offsets_[ci] + (t - c.t_begin);
            const double g = c.violation(fp_.outputs(t, c.component)) - bound_offset_;
            const double shifted = lambda(idx) + rho * g;
            const double m = std::max(0.0, shifted);
            value += (m * m - lambda(idx) * lambda(idx)) / (2.0 * rho);
            if (m > 0.0) {
              const double sign = c.is_lower ? -1.0 : 1.0;
              grad.noalias() += (sign * m) * out_sens.row(c.component).transpose();
              hessian.selfadjointView<Eigen::Lower>().rankUpdate(
                  out_sens.row(c.component).transpose(), rho);
            }
          }
        }

        if (t < h) {
          model.basis->jacobians_into(x_t, u_t, jx_buf_, ju_buf_);
          state_sens = (model.A * jx_buf_) * state_sens;
          state_sens.middleCols(t * n_u, n_u) += model.A * ju_buf_;
        }
      }
      if (active_[i]) cidx += constraints_per_scenario_;
    }
    const VectorXd uf = flatten(u);
    value += kTieBreakRegularization * uf.squaredNorm();
    grad += 2.0 * kTieBreakRegularization * uf;
    hessian.diagonal().array() += 2.0 * kTieBreakRegularization;
    const MatrixXd symmetrized = hessian.selfadjointView<Eigen::Lower>();
    hessian = symmetrized;
    return value;
  }

  // Stagewise minimization of the augmented Lagrangian by iterative LQR over
  // the joint scenario state (scenarios share the input trajectory, so the
  // value function lives on the stacked state and the feedback gains couple
  // all scenarios). The rollout-based forward pass with feedback is what
  // keeps long-horizon descent stable where dense Newton steps on the
  // flattened input vector overshoot. Uses the Gauss-Newton stage model; the
  // control-space regularization mu adapts on backward/forward failures.
  //
  // Returns the clamped iterate; the caller polishes stationarity afterwards.
  MatrixXd ilqr_minimize(MatrixXd u, const VectorXd& lambda, double rho, const VectorXd& lo,
                         const VectorXd& hi, double tol, int max_iterations,
                         double& mu_io) const {
    const int h = problem_.horizon;
    const int n_u = problem_.input_dim();
    const double inv_k = 1.0 / static_cast<double>(problem_.scenarios.size());
    const int num_active = static_cast<int>(std::count(active_.begin(), active_.end(), true));
    (void)num_active;

    // Canonical scenario list and joint-state layout.
    std::vector<const Scenario*> scen;
    std::vector<bool> scen_active;
    for (int i : order_) {
      scen.push_back(&problem_.scenarios[i]);
      scen_active.push_back(active_[i]);
    }
    const int count = static_cast<int>(scen.size());
    std::vector<int> state_offset(count);
    int joint_dim = 0;
    for (int k = 0; k < count; ++k) {
      state_offset[k] = joint_dim;
      joint_dim += static_cast<int>(scen[k]->model.state_dim());
    }

    auto clamp_row = [&](VectorXd v) {
      for (int j = 0; j < n_u; ++j) v(j) = std::min(std::max(v(j), lo(j)), hi(j));
      return v;
    };

    // Rollout of all scenarios for a given input trajectory, caching the
    // dynamics jacobian products A J_x, A J_u along the nominal trajectory
    // for the backward pass (and its regularization retries).
    std::vector<std::vector<MatrixXd>> fx_cache(count), fu_cache(count);
    auto rollout_joint = [&](const MatrixXd& inputs, std::vector<MatrixXd>& states,
                             std::vector<MatrixXd>& outputs) {
      states.assign(count, MatrixXd());
      outputs.assign(count, MatrixXd());
      MatrixXd jx, ju;
      for (int k = 0; k < count; ++k) {
        ForwardPass fp;
        forward_pass(*scen[k], inputs, fp);
        states[k] = std::move(fp.states);
        outputs[k] = std::move(fp.outputs);
        const BasisStateSpaceModel& model = scen[k]->model;
        fx_cache[k].resize(h);
        fu_cache[k].resize(h);
        for (int t = 0; t < h; ++t) {
          model.basis->jacobians_into(states[k].row(t).transpose(),
                                      inputs.row(t).transpose(), jx, ju);
          fx_cache[k][t].noalias() = model.A * jx;
          fu_cache[k][t].noalias() = model.A * ju;
        }
      }
    };

    // Stage derivative bundle with respect to the output of one scenario.
    auto output_seeds = [&](int k, int t, const VectorXd& u_t, const VectorXd& y_t,
                            VectorXd& s_y, MatrixXd& s_yy) {
      const int n_y = static_cast<int>(scen[k]->model.output_dim());
      s_y = inv_k * problem_.cost.stage_grad_output(u_t, y_t);
      s_yy = problem_.cost.stage_hess_output
                 ? MatrixXd(inv_k * problem_.cost.stage_hess_output(u_t, y_t))
                 : MatrixXd::Zero(n_y, n_y);
      if (t == h) {
        s_y += inv_k * problem_.cost.terminal_grad(y_t);
        if (problem_.cost.terminal_hess) s_yy += inv_k * problem_.cost.terminal_hess(y_t);
      }
      if (scen_active[k]) {
        int base = 0;
        for (int kk = 0; kk < count; ++kk) {
          if (kk == k) break;
          if (scen_active[kk]) base += constraints_per_scenario_;
        }
        for (std::size_t ci = 0; ci < problem_.output_constraints.size(); ++ci) {
          const OutputConstraint& c = problem_.output_constraints[ci];
          if (t < c.t_begin || t > c.t_end) continue;
          const int idx = base + constraint_offsets_[ci] + (t - c.t_begin);
          const double g = c.violation(y_t(c.component)) - bound_offset_;
          const double m = std::max(0.0, lambda(idx) + rho * g);
          if (m > 0.0) {
            s_y(c.component) += c.is_lower ? -m : m;
            s_yy(c.component, c.component) += rho;
          }
        }
      }
    };

    std::vector<MatrixXd> states, outputs;
    rollout_joint(u, states, outputs);
    double value = evaluate(u, lambda, rho, nullptr, nullptr);

    std::vector<VectorXd> ff(h + 1);          // feedforward per time
    std::vector<MatrixXd> fb(h + 1);          // feedback on the joint state
    std::vector<MatrixXd> f_x(count), f_u(count);

    double last_ff_norm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iterations; ++it) {
      // Stationarity check on the projected augmented-Lagrangian gradient.
      // The adjoint pass is not free, so it only runs when the previous
      // backward pass's feedforward step was already small.
      if (it == 0 || last_ff_norm <= 100.0 * tol) {
        MatrixXd grad;
        evaluate(u, lambda, rho, nullptr, &grad);
        double pg = 0.0;
        for (int t = 0; t <= h; ++t) {
          for (int j = 0; j < n_u; ++j) {
            const double moved =
                std::min(std::max(u(t, j) - grad(t, j), lo(j)), hi(j));
            pg = std::max(pg, std::abs(u(t, j) - moved));
          }
        }
        if (pg <= tol) return u;
      }

      // Backward pass; restart with stiffer regularization when Q_uu fails.
      bool backward_ok = false;
      for (int reg_try = 0; reg_try < 20 && !backward_ok; ++reg_try) {
        backward_ok = true;
        VectorXd v_x = VectorXd::Zero(joint_dim);
        MatrixXd v_xx = MatrixXd::Zero(joint_dim, joint_dim);
        for (int t = h; t >= 0 && backward_ok; --t) {
          const VectorXd u_t = u.row(t).transpose();
          VectorXd q_u = VectorXd::Zero(n_u);
          MatrixXd q_uu = MatrixXd::Zero(n_u, n_u);
          VectorXd l_x_joint = VectorXd::Zero(joint_dim);
          MatrixXd l_xx_joint = MatrixXd::Zero(joint_dim, joint_dim);
          MatrixXd q_ux = MatrixXd::Zero(n_u, joint_dim);
          MatrixXd f_u_joint = MatrixXd::Zero(joint_dim, n_u);

          for (int k = 0; k < count; ++k) {
            const BasisStateSpaceModel& model = scen[k]->model;
            const int n_x = static_cast<int>(model.state_dim());
            const int off = state_offset[k];
            const VectorXd x_t = states[k].row(t).transpose();
            const VectorXd y_t = outputs[k].row(t).transpose();
            VectorXd s_y;
            MatrixXd s_yy;
            output_seeds(k, t, u_t, y_t, s_y, s_yy);

            q_u += inv_k * problem_.cost.stage_grad_input(u_t, y_t) +
                   model.obs.D.transpose() * s_y;
            if (problem_.cost.stage_hess_input) {
              q_uu += inv_k * problem_.cost.stage_hess_input(u_t, y_t);
            }
            q_uu += model.obs.D.transpose() * s_yy * model.obs.D;
            l_x_joint.segment(off, n_x) = model.obs.C.transpose() * s_y;
            l_xx_joint.block(off, off, n_x, n_x) =
                model.obs.C.transpose() * s_yy * model.obs.C;
            q_ux.middleCols(off, n_x) +=
                model.obs.D.transpose() * s_yy * model.obs.C;

            if (t < h) {
              f_x[k] = fx_cache[k][t];
              f_u[k] = fu_cache[k][t];
              f_u_joint.block(off, 0, n_x, n_u) = f_u[k];
            }
          }
          // Tie-break regularization, once per time step.
          q_u += 2.0 * kTieBreakRegularization * u_t;
          q_uu.diagonal().array() += 2.0 * kTieBreakRegularization;

          if (t < h) {
            q_u.noalias() += f_u_joint.transpose() * v_x;
            const MatrixXd vxx_fu = v_xx * f_u_joint;  // joint x n_u
            q_uu.noalias() += f_u_joint.transpose() * vxx_fu;
            // v_x / v_xx propagated through the block-diagonal F_X as one
            // block-row pass and one block-column pass.
            MatrixXd w = v_xx;  // becomes F_X^T V
            for (int k = 0; k < count; ++k) {
              const int off = state_offset[k];
              const int n_x = static_cast<int>(scen[k]->model.state_dim());
              l_x_joint.segment(off, n_x).noalias() +=
                  f_x[k].transpose() * v_x.segment(off, n_x);
              q_ux.middleCols(off, n_x).noalias() +=
                  (f_x[k].transpose() * vxx_fu.middleRows(off, n_x)).transpose();
              w.middleRows(off, n_x) = f_x[k].transpose() * v_xx.middleRows(off, n_x);
            }
            for (int l = 0; l < count; ++l) {
              const int off = state_offset[l];
              const int n_x = static_cast<int>(scen[l]->model.state_dim());
              l_xx_joint.middleCols(off, n_x).noalias() += w.middleCols(off, n_x) * f_x[l];
            }
          }

          MatrixXd q_uu_reg = q_uu;
          q_uu_reg.diagonal().array() += mu_io;
          Eigen::LLT<MatrixXd> llt(q_uu_reg);
          if (llt.info() != Eigen::Success) {
            mu_io = std::max(mu_io * 10.0, 1e-6);
            backward_ok = false;
            break;
          }
          ff[t] = llt.solve(-q_u);
          fb[t] = llt.solve(-q_ux);

          v_x = l_x_joint + q_ux.transpose() * ff[t];
          v_xx = l_xx_joint + q_ux.transpose() * fb[t];
          v_xx = 0.5 * (v_xx + v_xx.transpose());
        }
        if (backward_ok) {
          last_ff_norm = 0.0;
          for (int t = 0; t <= h; ++t) {
            last_ff_norm = std::max(last_ff_norm, ff[t].cwiseAbs().maxCoeff());
          }
        }
        if (!backward_ok && mu_io > 1e12) return u;
      }
      if (!backward_ok) return u;

      // Forward pass: feedback rollout with step scaling.
      bool improved = false;
      for (double alpha : {1.0, 0.5, 0.25, 0.1, 0.03, 0.01}) {
        MatrixXd u_try(h + 1, n_u);
        std::vector<VectorXd> x_cur(count);
        for (int k = 0; k < count; ++k) x_cur[k] = scen[k]->initial_state;
        for (int t = 0; t <= h; ++t) {
          VectorXd du = alpha * ff[t];
          for (int k = 0; k < count; ++k) {
            const int off = state_offset[k];
            const int n_x = static_cast<int>(scen[k]->model.state_dim());
            du.noalias() += fb[t].middleCols(off, n_x) *
                            (x_cur[k] - states[k].row(t).transpose());
          }
          const VectorXd u_t = clamp_row(u.row(t).transpose() + du);
          u_try.row(t) = u_t.transpose();
          if (t < h) {
            for (int k = 0; k < count; ++k) {
              x_cur[k] = dynamics_mean(scen[k]->model, x_cur[k], u_t) +
                         scen[k]->process_noise.row(t).transpose();
            }
          }
        }
        double value_try;
        try {
          value_try = evaluate(u_try, lambda, rho, nullptr, nullptr);
        } catch (const DivergenceError&) {
          continue;  // trial rollout left the admissible range; shrink alpha
        }
        if (value_try < value - 1e-12 * std::abs(value)) {
          u = u_try;
          value = value_try;
          rollout_joint(u, states, outputs);
          mu_io = std::max(mu_io * 0.5, 1e-10);
          improved = true;
          break;
        }
      }
      if (!improved) {
        mu_io *= 10.0;
        if (mu_io > 1e12) return u;
      }
    }
    return u;
  }

  // Constraint values at u, canonical order, no objective work.
  VectorXd constraint_values(const MatrixXd& u) const {
    VectorXd g(num_constraints_);
    int cidx = 0;
    for (int i : order_) {
      if (!active_[i]) continue;
      forward_pass(problem_.scenarios[i], u, fp_);
      for (const OutputConstraint& c : problem_.output_constraints) {
        for (int t = c.t_begin; t <= c.t_end; ++t) {
          g(cidx++) = c.violation(fp_.outputs(t, c.component)) - bound_offset_;
        }
      }
    }
    return g;
  }

 private:
  const ScenarioOCP& problem_;
  const std::vector<bool>& active_;
  std::vector<int> order_;
  std::vector<int> constraint_offsets_;  // per declared constraint, within a scenario block
  double bound_offset_ = 0.0;
  int num_constraints_ = 0;
  int constraints_per_scenario_ = 0;
  mutable ForwardPass fp_;
  mutable MatrixXd jx_buf_, ju_buf_;
};

inline VectorXd clamp_box(const VectorXd& u, const VectorXd& lo, const VectorXd& hi, int n_u) {
  VectorXd out = u;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const int j = static_cast<int>(i % n_u);
    out(i) = std::min(std::max(u(i), lo(j)), hi(j));
  }
  return out;
}

struct InnerResult {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
  double projected_gradient = 0.0;
};

// Projected Newton descent with Levenberg-style trust-region damping on the
// augmented Lagrangian. Each iteration assembles the Gauss-Newton model
// (exact hinge-constraint curvature from forward sensitivities), solves the
// damped system on the free coordinates, projects the step onto the box and
// adapts the damping on the ratio of actual to predicted decrease. The
// adaptive damping is what survives the rugged curvature of long-horizon
// rollouts, where fixed line searches along pure Newton directions stall.
template <typename Model, typename ValueOnly>
InnerResult projected_newton(VectorXd x0, const Model& model, const ValueOnly& value_only,
                             const VectorXd& lo, const VectorXd& hi, int n_u, double tol,
                             int max_iterations) {
  InnerResult res;
  res.x = clamp_box(x0, lo, hi, n_u);
  VectorXd grad;
  MatrixXd hessian;
  res.value = model(res.x, grad, hessian);
  const Eigen::Index dim = res.x.size();

  auto bound_at = [&](Eigen::Index i, const VectorXd& b) { return b(i % n_u); };
  double mu = 1e-6;
  int model_trust_steps = 0;

  for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
    const VectorXd pg = res.x - clamp_box(res.x - grad, lo, hi, n_u);
    res.projected_gradient = pg.size() ? pg.cwiseAbs().maxCoeff() : 0.0;
    if (res.projected_gradient <= tol) break;

    std::vector<Eigen::Index> free_idx;
    free_idx.reserve(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const bool at_lo = res.x(i) <= bound_at(i, lo) && grad(i) > 0.0;
      const bool at_hi = res.x(i) >= bound_at(i, hi) && grad(i) < 0.0;
      if (!(at_lo || at_hi)) free_idx.push_back(i);
    }
    if (free_idx.empty()) break;

    const Eigen::Index m = static_cast<Eigen::Index>(free_idx.size());
    MatrixXd h_ff(m, m);
    VectorXd g_f(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      g_f(a) = grad(free_idx[a]);
      for (Eigen::Index b = 0; b < m; ++b) h_ff(a, b) = hessian(free_idx[a], free_idx[b]);
    }
    const double diag_scale = std::max(1e-8, h_ff.trace() / static_cast<double>(m));
    // Decreases below this are indistinguishable from summation roundoff in
    // the value; steps predicting less are accepted on the model alone (the
    // gradient is far less noisy than the value, so the polish below the
    // value noise floor is still sound).
    const double noise_floor = 1e-12 * (1.0 + std::abs(res.value));

    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      MatrixXd h_try = h_ff;
      h_try.diagonal().array() += mu * diag_scale;
      Eigen::LLT<MatrixXd> llt(h_try);
      if (llt.info() != Eigen::Success) {
        mu = std::max(mu * 10.0, 1e-8);
        continue;
      }
      const VectorXd d_f = llt.solve(-g_f);
      VectorXd x_new = res.x;
      for (Eigen::Index a = 0; a < m; ++a) x_new(free_idx[a]) += d_f(a);
      x_new = clamp_box(x_new, lo, hi, n_u);
      const VectorXd s = x_new - res.x;
      if (s.cwiseAbs().maxCoeff() == 0.0) {
        mu *= 10.0;
        if (mu > 1e14) break;
        continue;
      }
      VectorXd s_f(m);
      for (Eigen::Index a = 0; a < m; ++a) s_f(a) = s(free_idx[a]);
      const double predicted = -(g_f.dot(s_f) + 0.5 * s_f.dot(h_ff * s_f));
      if (predicted > 0.0 && predicted <= noise_floor && model_trust_steps < 8) {
        ++model_trust_steps;
        res.value = model(x_new, grad, hessian);
        res.x = x_new;
        accepted = true;
        break;
      }
      const double value_new = value_only(x_new);
      const double actual = res.value - value_new;
      if (actual > 0.0) {
        const double ratio = predicted > 0.0 ? actual / predicted : 1.0;
        if (ratio > 0.75) {
          mu = std::max(mu / 3.0, 1e-12);
        } else if (ratio < 0.25) {
          mu *= 4.0;
        }
        res.value = model(x_new, grad, hessian);
        res.x = x_new;
        accepted = true;
      } else {
        mu *= 10.0;
        if (mu > 1e14) break;
      }
    }
#ifdef PGOC_DEBUG_LS
    if (!accepted) {
      std::fprintf(stderr, "[newton stall] pg=%.3e f=%.12f\n", res.projected_gradient,
                   res.value);
      for (double t : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10}) {
        const VectorXd probe = clamp_box(res.x - t * grad, lo, hi, n_u);
        std::fprintf(stderr, "  f(x - %.0e g) - f = %.6e\n", t,
                     value_only(probe) - res.value);
      }
    }
#endif
    if (!accepted) break;  // no decrease possible at machine precision
  }
  const VectorXd pg = res.x - clamp_box(res.x - grad, lo, hi, n_u);
  res.projected_gradient = pg.size() ? pg.cwiseAbs().maxCoeff() : 0.0;
  return res;
}

}  // namespace detail

/// Solve the scenario OCP with only the constraints of the scenarios flagged
/// in `active_constraints` enforced; the objective always averages every
/// scenario. Support-set probing uses this; `solve` enforces all.
inline Solution solve_with_active_constraints(const ScenarioOCP& problem,
                                              const SolverConfig& config,
                                              const std::vector<bool>& active_constraints) {
  problem.validate();
  config.validate();
  if (active_constraints.size() != problem.scenarios.size()) {
    throw std::invalid_argument("solve: active flag per scenario required");
  }
  if (!problem.cost.has_gradients()) {
    throw std::invalid_argument("solve: cost gradients are required");
  }
  const int n_u = problem.input_dim();
  const int dim = problem.decision_dim();
  const VectorXd& lo = problem.input_lower;
  const VectorXd& hi = problem.input_upper;

  detail::AugmentedLagrangian al(problem, active_constraints);
  VectorXd lambda = VectorXd::Zero(al.num_constraints());

  VectorXd x = config.initial_guess.size() ? config.initial_guess : VectorXd::Zero(dim);
  if (x.size() != dim) throw std::invalid_argument("solve: initial guess has wrong size");
  x = detail::clamp_box(x, lo, hi, n_u);

  Solution sol;
  double last_pg = std::numeric_limits<double>::infinity();
  int outer_count = 0;

  // One augmented-Lagrangian loop at a fixed bound offset. Returns true when
  // the stage met its exit test within its outer budget. Intermediate stages
  // only need to be nearly feasible relative to the continuation step they
  // just took; the final stage runs the full convergence loop.
  const auto run_stage = [&](double offset, double step, bool final_stage) {
    al.set_bound_offset(offset);
    double rho = config.initial_penalty;
    double ilqr_mu = 1e-6;
    double prev_violation = std::numeric_limits<double>::infinity();
    bool was_feasible = al.num_constraints() == 0;
    const int stage_outer_budget = final_stage ? config.max_outer_iterations : 6;
    const double stage_violation_exit =
        final_stage ? config.constraint_tol : std::max(config.constraint_tol, 0.1 * step);
    const double stage_pg_exit =
        final_stage ? config.stationarity_tol : std::max(config.stationarity_tol, 1e-3);

    for (int outer = 0; outer < stage_outer_budget; ++outer) {
      const double inner_tol =
          (final_stage && was_feasible)
              ? config.stationarity_tol
              : std::max(config.stationarity_tol, 1e-3 * std::pow(10.0, -outer));

      auto newton_model = [&](const VectorXd& v, VectorXd& grad, MatrixXd& hessian) {
        return al.newton_model(detail::unflatten(v, problem.horizon, n_u), lambda, rho, grad,
                               hessian);
      };
      auto value_only = [&](const VectorXd& v) {
        return al.evaluate(detail::unflatten(v, problem.horizon, n_u), lambda, rho, nullptr,
                           nullptr);
      };

      // Feedback-rollout descent to enter the basin, dense Newton to polish;
      // the Newton model is cheap per iteration, the feedback rollout is what
      // survives large steps.
      x = detail::flatten(al.ilqr_minimize(detail::unflatten(x, problem.horizon, n_u), lambda,
                                           rho, lo, hi, std::max(inner_tol, 3e-2),
                                           std::min(config.max_inner_iterations, 25),
                                           ilqr_mu));
      detail::InnerResult inner = detail::projected_newton(
          x, newton_model, value_only, lo, hi, n_u, inner_tol,
          config.max_inner_iterations);
      x = inner.x;
      last_pg = inner.projected_gradient;

      const MatrixXd u_mat = detail::unflatten(x, problem.horizon, n_u);
      const VectorXd g = al.constraint_values(u_mat);
      const double violation = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;

      sol.iterations.push_back({outer_count++, inner.iterations, objective(problem, u_mat),
                                violation, rho, inner.projected_gradient});

      if (final_stage && violation <= config.constraint_tol &&
          last_pg <= config.stationarity_tol) {
        sol.converged = true;
        return true;
      }
      if (!final_stage && violation <= stage_violation_exit && last_pg <= stage_pg_exit) {
        return true;
      }
      for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        lambda(j) = std::max(0.0, lambda(j) + rho * g(j));
      }
      // Grow the penalty only while clearly infeasible and stalling, and cap
      // it: huge penalties wreck the attainable stationarity (value decreases
      // below the floating-point noise floor), while the multiplier iteration
      // finishes feasibility on its own near the end.
      const double rho_cap = std::max(1e5, config.initial_penalty);
      if (violation > 3.0 * config.constraint_tol && violation > 0.25 * prev_violation &&
          rho < rho_cap) {
        rho = std::min(rho * config.penalty_growth, rho_cap);
      }
      if (violation <= config.constraint_tol) was_feasible = true;
      prev_violation = violation;
    }
    return false;
  };

  // Constraint continuation: walk the bounds from trivially satisfiable at
  // the initial guess down to the true problem, halving the relaxation each
  // stage and bisecting (with a checkpoint restart) when a step is too big
  // for the warm-started Newton loop. The relaxation span is a maximum over
  // the active scenario set, so the whole path is invariant under scenario
  // permutations. Long-horizon trajectory problems that defeat a single-shot
  // penalty converge stage by stage.
  double span = 0.0;
  if (al.num_constraints() > 0) {
    const VectorXd g0 = al.constraint_values(detail::unflatten(x, problem.horizon, n_u));
    span = std::max(0.0, g0.maxCoeff());
  }
  if (span > config.constraint_tol) {
    double achieved = span;  // feasible by construction at the initial guess
    int stages_used = 0;
    const int max_stages = 40;
    while (achieved > 0.0 && stages_used < max_stages) {
      double target = achieved <= 0.12 * span ? 0.0 : achieved - 0.3 * span;
      const VectorXd x_checkpoint = x;
      const VectorXd lambda_checkpoint = lambda;
      for (;;) {
        const bool ok = run_stage(target, achieved - target, false);
        ++stages_used;
        if (ok || stages_used >= max_stages || achieved - target <= 1e-3 * span) {
          achieved = target;
          break;
        }
        // Step was too large: restore the checkpoint and try half the step.
        x = x_checkpoint;
        lambda = lambda_checkpoint;
        target = 0.5 * (achieved + target);
      }
    }
  }
  run_stage(0.0, span, true);

  sol.u_star = detail::unflatten(x, problem.horizon, n_u);
  sol.objective = objective(problem, sol.u_star);
  sol.kkt_residual = last_pg;

  // Residuals for every scenario in original order, enforced or not.
  if (!problem.output_constraints.empty()) {
    sol.scenario_residuals.resize(problem.scenarios.size());
    detail::ForwardPass fp;
    for (std::size_t k = 0; k < problem.scenarios.size(); ++k) {
      detail::forward_pass(problem.scenarios[k], sol.u_star, fp);
      double worst = -std::numeric_limits<double>::infinity();
      for (const OutputConstraint& c : problem.output_constraints) {
        for (int t = c.t_begin; t <= c.t_end; ++t) {
          worst = std::max(worst, c.violation(fp.outputs(t, c.component)));
        }
      }
      sol.scenario_residuals(k) = worst;
    }
  }

  double enforced_violation = 0.0;
  for (std::size_t k = 0; k < problem.scenarios.size(); ++k) {
    if (active_constraints[k] && sol.scenario_residuals.size()) {
      enforced_violation = std::max(enforced_violation, sol.scenario_residuals(k));
    }
  }
  sol.feasible = enforced_violation <= config.constraint_tol;
  return sol;
}

/// Solve the scenario OCP with every scenario's constraints enforced.
/// Deterministic: identical problem and config give bit-identical solutions,
/// and permuting the scenario list leaves the solution unchanged.
inline Solution solve(const ScenarioOCP& problem, const SolverConfig& config) {
  return solve_with_active_constraints(problem, config,
                                       std::vector<bool>(problem.scenarios.size(), true));
}

}  // namespace pgoc
