#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "pgoc/basis.hpp"
#include "pgoc/matrix_random.hpp"

namespace pgoc {

/// Input-output record {u_t, y_t} for t = start_index() .. -1. Rows are time
/// steps, so inputs.row(i) is the input at time start_index() + i.
struct Dataset {
  MatrixXd inputs;   // length x n_u
  MatrixXd outputs;  // length x n_y

  Dataset() = default;
  Dataset(MatrixXd in, MatrixXd out) : inputs(std::move(in)), outputs(std::move(out)) {
    if (inputs.rows() != outputs.rows()) {
      throw std::invalid_argument("Dataset: inputs and outputs must have equal length");
    }
    if (inputs.rows() < 1) throw std::invalid_argument("Dataset: must contain at least one row");
  }

  Eigen::Index length() const { return inputs.rows(); }
  Eigen::Index input_dim() const { return inputs.cols(); }
  Eigen::Index output_dim() const { return outputs.cols(); }
  /// Time index of the first row; the record always ends at time -1.
  std::int64_t start_index() const { return -static_cast<std::int64_t>(length()); }

  VectorXd last_input() const { return inputs.row(inputs.rows() - 1).transpose(); }
};

/// Known observation map y = C x + D u + w, w ~ N(0, R).
struct LinearObservation {
  MatrixXd C;  // n_y x n_x
  MatrixXd D;  // n_y x n_u
  MatrixXd R;  // n_y x n_y, positive semi-definite

  LinearObservation() = default;
  LinearObservation(MatrixXd c, MatrixXd d, MatrixXd r)
      : C(std::move(c)), D(std::move(d)), R(std::move(r)) {
    if (C.rows() != D.rows() || C.rows() != R.rows() || R.rows() != R.cols()) {
      throw std::invalid_argument("LinearObservation: inconsistent dimensions");
    }
    psd_factor(R, "LinearObservation R");  // validates symmetry / psd
  }

  /// Single-output observation of one state component, y = x(index) + w.
  static LinearObservation component(int index, int n_x, int n_u, double noise_variance) {
    MatrixXd c = MatrixXd::Zero(1, n_x);
    c(0, index) = 1.0;
    MatrixXd r(1, 1);
    r(0, 0) = noise_variance;
    return LinearObservation(c, MatrixXd::Zero(1, n_u), r);
  }

  VectorXd eval(const VectorXd& x, const VectorXd& u) const { return C * x + D * u; }
  Eigen::Index output_dim() const { return C.rows(); }
};

/// One posterior sample of the dynamics: x' = A phi(x, u) + v, v ~ N(0, Q),
/// with a known observation model. Immutable after construction.
struct BasisStateSpaceModel {
  MatrixXd A;  // n_x x n_a
  MatrixXd Q;  // n_x x n_x process-noise covariance
  BasisPtr basis;
  LinearObservation obs;

  BasisStateSpaceModel() = default;
  BasisStateSpaceModel(MatrixXd a, MatrixXd q, BasisPtr b, LinearObservation o)
      : A(std::move(a)), Q(std::move(q)), basis(std::move(b)), obs(std::move(o)) {
    if (!basis) throw std::invalid_argument("BasisStateSpaceModel: basis is required");
    if (A.cols() != basis->output_dim()) {
      throw std::invalid_argument("BasisStateSpaceModel: A columns must equal basis output dim");
    }
    if (Q.rows() != A.rows() || Q.cols() != A.rows()) {
      throw std::invalid_argument("BasisStateSpaceModel: Q must be n_x x n_x");
    }
    psd_factor(Q, "BasisStateSpaceModel Q");  // validates symmetry / psd
    if (obs.C.cols() != A.rows()) {
      throw std::invalid_argument("BasisStateSpaceModel: observation state dim mismatch");
    }
  }

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return basis->input_dim(); }
  Eigen::Index output_dim() const { return obs.output_dim(); }
};

/// Mean next state A phi(x, u).
inline VectorXd dynamics_mean(const BasisStateSpaceModel& model, const VectorXd& x,
                              const VectorXd& u) {
  return model.A * model.basis->eval(x, u);
}

/// Mean observation g(x, u).
inline VectorXd observe_mean(const BasisStateSpaceModel& model, const VectorXd& x,
                             const VectorXd& u) {
  if (x.size() != model.state_dim()) {
    throw std::invalid_argument("observe_mean: state dimension mismatch");
  }
  return model.obs.eval(x, u);
}

/// Matrix-normal / inverse-Wishart prior over (A, Q):
///   Q ~ IW(scale_matrix, dof),  A | Q ~ MN(mean, Q, coefficient_cov).
struct MNIWPrior {
  MatrixXd scale_matrix;     // n_x x n_x, positive definite
  double dof = 0.0;          // > n_x - 1
  MatrixXd mean;             // n_x x n_a
  MatrixXd coefficient_cov;  // n_a x n_a, positive definite

  MNIWPrior() = default;
  MNIWPrior(MatrixXd scale, double degrees, MatrixXd m, MatrixXd coef_cov)
      : scale_matrix(std::move(scale)), dof(degrees), mean(std::move(m)),
        coefficient_cov(std::move(coef_cov)) {
    const auto n = scale_matrix.rows();
    if (scale_matrix.cols() != n || mean.rows() != n) {
      throw std::invalid_argument("MNIWPrior: inconsistent dimensions");
    }
    if (coefficient_cov.rows() != mean.cols() || coefficient_cov.cols() != mean.cols()) {
      throw std::invalid_argument("MNIWPrior: coefficient_cov must be n_a x n_a");
    }
    if (!(dof > static_cast<double>(n) - 1.0)) {
      throw std::invalid_argument("MNIWPrior: dof must exceed n_x - 1");
    }
    cholesky(scale_matrix, "MNIWPrior scale_matrix");
    cholesky(coefficient_cov, "MNIWPrior coefficient_cov");
  }

  static MNIWPrior isotropic(int n_x, int n_a, double scale, double degrees, double coef_scale) {
    return MNIWPrior(scale * MatrixXd::Identity(n_x, n_x), degrees, MatrixXd::Zero(n_x, n_a),
                     coef_scale * MatrixXd::Identity(n_a, n_a));
  }
};

/// Gaussian prior over the initial latent state.
struct GaussianPrior {
  VectorXd mean;
  MatrixXd cov;
};

/// Latent state sequence aligned to a dataset's time indices.
struct StateTrajectory {
  MatrixXd states;  // length x n_x, row i is the state at dataset time start + i

  Eigen::Index length() const { return states.rows(); }
  VectorXd last_state() const { return states.row(states.rows() - 1).transpose(); }
};

/// Frozen tuple {model, x0, process noise, measurement noise} defining one
/// deterministic rollout over the control horizon.
struct Scenario {
  BasisStateSpaceModel model;
  VectorXd initial_state;
  MatrixXd process_noise;      // (H+1) x n_x, rows v_0 .. v_H
  MatrixXd measurement_noise;  // (H+1) x n_y, rows w_0 .. w_H

  Scenario() = default;
  Scenario(BasisStateSpaceModel m, VectorXd x0, MatrixXd v, MatrixXd w)
      : model(std::move(m)), initial_state(std::move(x0)), process_noise(std::move(v)),
        measurement_noise(std::move(w)) {
    if (process_noise.rows() != measurement_noise.rows()) {
      throw std::invalid_argument("Scenario: noise sequences must have equal length");
    }
    if (process_noise.cols() != model.state_dim() ||
        measurement_noise.cols() != model.output_dim()) {
      throw std::invalid_argument("Scenario: noise dimensions do not match model");
    }
    if (initial_state.size() != model.state_dim()) {
      throw std::invalid_argument("Scenario: initial state dimension mismatch");
    }
  }

  int horizon() const { return static_cast<int>(process_noise.rows()) - 1; }
};

namespace detail {

inline void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

inline void hash_matrix(std::uint64_t& h, const MatrixXd& m) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  hash_bytes(h, dims, sizeof(dims));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      hash_bytes(h, &v, sizeof(v));
    }
}

}  // namespace detail

/// FNV-1a digest of the dataset contents; used to tie posterior samples and
/// solutions to the data they were produced from.
inline std::uint64_t dataset_digest(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  detail::hash_matrix(h, data.inputs);
  detail::hash_matrix(h, data.outputs);
  return h;
}

/// Content digest of a scenario. Equal scenarios hash equal; used to give the
/// optimizer a scenario-order-independent accumulation order.
inline std::uint64_t scenario_digest(const Scenario& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  detail::hash_matrix(h, s.model.A);
  detail::hash_matrix(h, s.model.Q);
  detail::hash_matrix(h, s.model.obs.C);
  detail::hash_matrix(h, s.model.obs.D);
  detail::hash_matrix(h, s.model.obs.R);
  detail::hash_bytes(h, s.model.basis->id().data(), s.model.basis->id().size());
  detail::hash_matrix(h, s.initial_state);
  detail::hash_matrix(h, s.process_noise);
  detail::hash_matrix(h, s.measurement_noise);
  return h;
}

}  // namespace pgoc
