#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pgoc/errors.hpp"
#include "pgoc/model.hpp"
#include "pgoc/pgas.hpp"

namespace pgoc {

/// Accumulated cost J = c_H(y_H) + sum_t c(u_t, y_t). The gradient members
/// are optional for simulation but required by the trajectory optimizer.
struct CostSpec {
  std::function<double(const VectorXd& u, const VectorXd& y)> stage;
  std::function<double(const VectorXd& y)> terminal;
  std::function<VectorXd(const VectorXd& u, const VectorXd& y)> stage_grad_input;
  std::function<VectorXd(const VectorXd& u, const VectorXd& y)> stage_grad_output;
  std::function<VectorXd(const VectorXd& y)> terminal_grad;
  // Optional curvature hints for the optimizer's Gauss-Newton model; any that
  // are missing are treated as zero (the solver's damping covers the rest).
  std::function<MatrixXd(const VectorXd& u, const VectorXd& y)> stage_hess_input;
  std::function<MatrixXd(const VectorXd& u, const VectorXd& y)> stage_hess_output;
  std::function<MatrixXd(const VectorXd& y)> terminal_hess;

  /// c(u, y) = u^T u, c_H = 0, with analytic derivatives.
  static CostSpec quadratic_input() {
    CostSpec c;
    c.stage = [](const VectorXd& u, const VectorXd&) { return u.squaredNorm(); };
    c.terminal = [](const VectorXd&) { return 0.0; };
    c.stage_grad_input = [](const VectorXd& u, const VectorXd&) -> VectorXd { return 2.0 * u; };
    c.stage_grad_output = [](const VectorXd&, const VectorXd& y) -> VectorXd {
      return VectorXd::Zero(y.size());
    };
    c.terminal_grad = [](const VectorXd& y) -> VectorXd { return VectorXd::Zero(y.size()); };
    c.stage_hess_input = [](const VectorXd& u, const VectorXd&) -> MatrixXd {
      return 2.0 * MatrixXd::Identity(u.size(), u.size());
    };
    return c;
  }

  bool has_gradients() const {
    return static_cast<bool>(stage_grad_input) && static_cast<bool>(stage_grad_output) &&
           static_cast<bool>(terminal_grad);
  }
};

/// Deterministic control law u_t = pi(u_history, y_history, t). Histories
/// start at the dataset's first time index and grow with the simulation, so
/// history row (length + t) is the value at control time t.
using ControlLaw =
    std::function<VectorXd(const MatrixXd& u_history, const MatrixXd& y_history, int t)>;

struct RolloutResult {
  MatrixXd inputs;   // (H+1) x n_u
  MatrixXd outputs;  // (H+1) x n_y
  MatrixXd states;   // (H+2) x n_x
  double cost = 0.0;
};

/// Turn posterior samples into frozen scenarios. Each scenario's x_0 is one
/// transition from the sample's final latent state using the dataset's last
/// input and a fresh process-noise draw; the horizon noise sequences are
/// drawn from N(0, Q^[k]) and N(0, R).
inline std::vector<Scenario> draw_scenarios(const PosteriorSamples& samples, const Dataset& data,
                                            int horizon, RngStream& rng) {
  if (samples.size() == 0) throw std::invalid_argument("draw_scenarios: no posterior samples");
  if (samples.trajectories.size() != samples.models.size()) {
    throw std::invalid_argument("draw_scenarios: models and trajectories misaligned");
  }
  if (horizon < 0) throw std::invalid_argument("draw_scenarios: horizon must be >= 0");

  const VectorXd u_last = data.last_input();
  std::vector<Scenario> scenarios;
  scenarios.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const BasisStateSpaceModel& model = samples.models[k];
    const int n_x = static_cast<int>(model.state_dim());
    const int n_y = static_cast<int>(model.output_dim());
    RngStream sk = rng.substream(k);
    const MatrixXd q_factor = psd_factor(model.Q, "draw_scenarios Q");
    const MatrixXd r_factor = psd_factor(model.obs.R, "draw_scenarios R");

    const VectorXd x_last = samples.trajectories[k].last_state();
    const VectorXd x0 = dynamics_mean(model, x_last, u_last) +
                        q_factor * standard_normal_vector(n_x, sk);

    MatrixXd v(horizon + 1, n_x), w(horizon + 1, n_y);
    for (int t = 0; t <= horizon; ++t) {
      v.row(t) = (q_factor * standard_normal_vector(n_x, sk)).transpose();
    }
    for (int t = 0; t <= horizon; ++t) {
      w.row(t) = (r_factor * standard_normal_vector(n_y, sk)).transpose();
    }
    scenarios.emplace_back(model, x0, std::move(v), std::move(w));
  }
  return scenarios;
}

namespace detail {

constexpr double kDivergenceBound = 1e9;

inline void check_state(const VectorXd& x, int t) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x(i)) || std::abs(x(i)) > kDivergenceBound) {
      throw DivergenceError("rollout state diverged", t);
    }
  }
}

}  // namespace detail

/// Deterministic rollout of a fixed input sequence through one scenario.
/// Pure: equal (scenario, inputs) give bit-identical results.
inline RolloutResult rollout_inputs(const Scenario& scenario, const MatrixXd& inputs,
                                    const CostSpec& cost) {
  const int h = scenario.horizon();
  if (static_cast<int>(inputs.rows()) != h + 1 ||
      inputs.cols() != scenario.model.input_dim()) {
    throw std::invalid_argument("rollout_inputs: inputs must be (H+1) x n_u");
  }
  const BasisStateSpaceModel& model = scenario.model;
  RolloutResult r;
  r.inputs = inputs;
  r.outputs.resize(h + 1, model.output_dim());
  r.states.resize(h + 2, model.state_dim());
  r.states.row(0) = scenario.initial_state.transpose();

  double j = 0.0;
  VectorXd x = scenario.initial_state;
  detail::check_state(x, 0);
  for (int t = 0; t <= h; ++t) {
    const VectorXd u = inputs.row(t).transpose();
    const VectorXd y =
        model.obs.eval(x, u) + scenario.measurement_noise.row(t).transpose();
    r.outputs.row(t) = y.transpose();
    j += cost.stage(u, y);
    x = dynamics_mean(model, x, u) + scenario.process_noise.row(t).transpose();
    detail::check_state(x, t + 1);
    r.states.row(t + 1) = x.transpose();
  }
  j += cost.terminal(r.outputs.row(h).transpose());
  r.cost = j;
  return r;
}

/// Closed-loop rollout: the control law sees the dataset history plus the
/// outputs simulated so far.
inline RolloutResult rollout_policy(const Scenario& scenario, const ControlLaw& policy,
                                    const Dataset& data, const CostSpec& cost) {
  if (!policy) throw std::invalid_argument("rollout_policy: policy is required");
  const int h = scenario.horizon();
  const BasisStateSpaceModel& model = scenario.model;
  const int len = static_cast<int>(data.length());

  MatrixXd u_hist(len + h + 1, model.input_dim());
  MatrixXd y_hist(len + h + 1, model.output_dim());
  u_hist.topRows(len) = data.inputs;
  y_hist.topRows(len) = data.outputs;

  RolloutResult r;
  r.inputs.resize(h + 1, model.input_dim());
  r.outputs.resize(h + 1, model.output_dim());
  r.states.resize(h + 2, model.state_dim());
  r.states.row(0) = scenario.initial_state.transpose();

  double j = 0.0;
  VectorXd x = scenario.initial_state;
  detail::check_state(x, 0);
  for (int t = 0; t <= h; ++t) {
    const VectorXd u = policy(u_hist.topRows(len + t), y_hist.topRows(len + t), t);
    if (u.size() != model.input_dim()) {
      throw std::invalid_argument("rollout_policy: policy returned wrong input dimension");
    }
    const VectorXd y =
        model.obs.eval(x, u) + scenario.measurement_noise.row(t).transpose();
    u_hist.row(len + t) = u.transpose();
    y_hist.row(len + t) = y.transpose();
    r.inputs.row(t) = u.transpose();
    r.outputs.row(t) = y.transpose();
    j += cost.stage(u, y);
    x = dynamics_mean(model, x, u) + scenario.process_noise.row(t).transpose();
    detail::check_state(x, t + 1);
    r.states.row(t + 1) = x.transpose();
  }
  j += cost.terminal(r.outputs.row(h).transpose());
  r.cost = j;
  return r;
}

/// Largest sampled cost; the certified upper bound of the cost theorem.
inline double max_cost(const std::vector<double>& costs) {
  if (costs.empty()) throw std::invalid_argument("max_cost: empty cost list");
  double m = costs[0];
  for (double c : costs) m = std::max(m, c);
  return m;
}

}  // namespace pgoc
