#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "pgoc/matrix_random.hpp"
#include "pgoc/model.hpp"

namespace pgoc {

/// The two-state benchmark plant with trigonometric couplings:
///   x1' = 0.8 x1 - 0.5 x2 + 0.1 cos(3 x1) x2
///   x2' = 0.4 x1 + 0.5 x2 + (1 + 0.3 sin(2 x2)) u
/// observed through y = x1. Noise covariances are fields so tests can switch
/// them off.
struct TrigPlant {
  MatrixXd process_cov = (MatrixXd(2, 2) << 0.03, -0.004, -0.004, 0.01).finished();
  double measurement_variance = 0.1;

  static VectorXd transition(const VectorXd& x, const VectorXd& u) {
    VectorXd next(2);
    next(0) = 0.8 * x(0) - 0.5 * x(1) + 0.1 * std::cos(3.0 * x(0)) * x(1);
    next(1) = 0.4 * x(0) + 0.5 * x(1) + (1.0 + 0.3 * std::sin(2.0 * x(1))) * u(0);
    return next;
  }

  static double observe(const VectorXd& x) { return x(0); }

  /// Exact coefficient matrix of the plant in the five-feature basis.
  static MatrixXd true_coefficients() {
    MatrixXd a(2, 5);
    a << 0.8, -0.5, 0.0, 0.1, 0.0,  //
        0.4, 0.5, 1.0, 0.0, 0.3;
    return a;
  }
};

/// Simulation setup for data generation.
struct PlantConfig {
  std::string kind = "trig2d";
  int length = 2000;
  double input_variance = 3.0;
  VectorXd initial_mean = (VectorXd(2) << 2.0, 2.0).finished();
  MatrixXd initial_cov = 0.5 * MatrixXd::Identity(2, 2);
  TrigPlant plant;

  void validate() const {
    if (kind != "trig2d") throw std::invalid_argument("PlantConfig: unknown plant '" + kind + "'");
    if (length < 1) throw std::invalid_argument("PlantConfig: length must be >= 1");
    if (!(input_variance >= 0.0)) {
      throw std::invalid_argument("PlantConfig: input_variance must be >= 0");
    }
  }
};

/// Simulation output: the observable dataset plus the latent state at the
/// last measurement time, kept so validation can continue the true
/// trajectory past the data window.
struct PlantRun {
  Dataset data;
  VectorXd last_state;  // latent state at time -1
};

inline PlantRun run_plant(const PlantConfig& config, RngStream& rng) {
  config.validate();
  const int len = config.length;
  const MatrixXd init_factor = psd_factor(config.initial_cov, "plant initial_cov");
  const MatrixXd q_factor = psd_factor(config.plant.process_cov, "plant process_cov");
  const double input_std = std::sqrt(config.input_variance);
  const double meas_std = std::sqrt(config.plant.measurement_variance);

  MatrixXd inputs(len, 1), outputs(len, 1);
  VectorXd x = config.initial_mean + init_factor * standard_normal_vector(2, rng);
  for (int i = 0; i < len; ++i) {
    const double u = input_std * rng.normal();
    inputs(i, 0) = u;
    outputs(i, 0) = TrigPlant::observe(x) + meas_std * rng.normal();
    if (i + 1 < len) {
      x = TrigPlant::transition(x, inputs.row(i).transpose()) +
          q_factor * standard_normal_vector(2, rng);
    }
  }
  PlantRun run;
  run.data = Dataset(std::move(inputs), std::move(outputs));
  run.last_state = x;
  return run;
}

/// Input-output record of the benchmark plant under Gaussian excitation;
/// latent states are discarded.
inline Dataset simulate_plant(const PlantConfig& config, RngStream& rng) {
  return run_plant(config, rng).data;
}

}  // namespace pgoc
