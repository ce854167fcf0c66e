#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgoc/errors.hpp"
#include "pgoc/matrix_random.hpp"
#include "pgoc/model.hpp"

namespace pgoc {

/// Particle Gibbs chain configuration.
struct PGConfig {
  int num_samples = 200;   // K, retained samples
  int burn_in = 200;       // K_b, discarded leading iterations
  int thinning = 5;        // k_d, keep every k_d-th iteration after burn-in
  int num_particles = 30;  // N
  std::uint64_t seed = 0;

  void validate() const {
    if (num_samples < 1) throw std::invalid_argument("PGConfig: num_samples must be >= 1");
    if (burn_in < 0) throw std::invalid_argument("PGConfig: burn_in must be >= 0");
    if (thinning < 1) throw std::invalid_argument("PGConfig: thinning must be >= 1");
    if (num_particles < 1) throw std::invalid_argument("PGConfig: num_particles must be >= 1");
  }

  int total_iterations() const { return burn_in + num_samples * thinning; }
};

/// Joint posterior samples {theta^[k], x^[k]} plus provenance.
struct PosteriorSamples {
  std::vector<BasisStateSpaceModel> models;
  std::vector<StateTrajectory> trajectories;
  PGConfig config;
  std::uint64_t data_digest = 0;

  std::size_t size() const { return models.size(); }
};

/// Optional per-sweep diagnostics; weight_sum_error is the largest deviation
/// of a normalized weight vector from summing to one.
struct CsmcDiagnostics {
  double weight_sum_error = 0.0;
  double min_effective_sample_size = std::numeric_limits<double>::infinity();
};

namespace detail {

inline int categorical(const VectorXd& weights, RngStream& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights(i);
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

// Multinomial resampling: `count` iid ancestor draws. Conditional SMC needs
// the free-particle ancestors iid given the weights; low-variance combs
// (systematic/stratified) are not exchangeable with a pinned reference slot
// and measurably bias the kernel's invariant distribution.
inline void multinomial_resample(const VectorXd& weights, int count, RngStream& rng,
                                 std::vector<int>& out) {
  out.resize(count);
  for (int j = 0; j < count; ++j) out[j] = categorical(weights, rng);
}

// Normalize log weights in place to probabilities; throws if every weight
// underflowed. Returns the normalized vector.
inline VectorXd normalize_log_weights(VectorXd logw, int time_index) {
  const double m = logw.maxCoeff();
  if (!std::isfinite(m)) {
    throw DegenerateWeightsError("particle weights degenerate", time_index);
  }
  VectorXd w = (logw.array() - m).exp();
  const double s = w.sum();
  w /= s;
  return w;
}

}  // namespace detail

/// One conditional sequential Monte Carlo sweep with ancestor sampling.
///
/// The reference trajectory occupies the last particle slot and is never
/// resampled away; its ancestry at each step is redrawn with weights
/// w_{t-1} * N(ref_t; A phi(x_{t-1}, u_{t-1}), Q), which is what keeps the
/// chain mixing at small particle counts. Free-particle ancestors are
/// multinomial draws (see multinomial_resample for why). Proposals are
/// bootstrap draws from the transition density and weights are the Gaussian
/// observation likelihood. All weight arithmetic is in log space.
///
/// The returned trajectory is one draw from the particle approximation of
/// p(x | theta, data); the sweep leaves that distribution invariant.
inline StateTrajectory csmc_sweep(const BasisStateSpaceModel& model, const Dataset& data,
                                  const StateTrajectory& reference,
                                  const GaussianPrior& initial_state_prior, int num_particles,
                                  RngStream& rng, CsmcDiagnostics* diag = nullptr) {
  const int len = static_cast<int>(data.length());
  const int n_x = static_cast<int>(model.state_dim());
  const int n = num_particles;
  if (n < 1) throw std::invalid_argument("csmc_sweep: need at least one particle");
  if (reference.length() != len) {
    throw std::invalid_argument("csmc_sweep: reference length must equal dataset length");
  }

  const GaussianDensity transition(VectorXd::Zero(n_x), model.Q);
  const GaussianDensity observation(VectorXd::Zero(model.output_dim()), model.obs.R);
  const GaussianDensity init(initial_state_prior.mean, initial_state_prior.cov);
  const MatrixXd chol_q = cholesky(model.Q, "csmc_sweep Q");

  std::vector<MatrixXd> particles(len, MatrixXd(n_x, n));
  std::vector<std::vector<int>> ancestors(len, std::vector<int>(n, 0));
  std::vector<VectorXd> weights(len);

  auto reference_state = [&](int i) { return reference.states.row(i).transpose(); };

  auto observe_and_weigh = [&](int i) {
    VectorXd logw(n);
    const VectorXd u = data.inputs.row(i).transpose();
    const VectorXd y = data.outputs.row(i).transpose();
    const VectorXd du = model.obs.D * u;
    for (int p = 0; p < n; ++p) {
      logw(p) = observation.log_density(y - model.obs.C * particles[i].col(p) - du);
    }
    weights[i] = detail::normalize_log_weights(std::move(logw), i);
    if (diag) {
      diag->weight_sum_error = std::max(diag->weight_sum_error,
                                        std::abs(weights[i].sum() - 1.0));
      diag->min_effective_sample_size =
          std::min(diag->min_effective_sample_size, 1.0 / weights[i].squaredNorm());
    }
  };

  for (int p = 0; p + 1 < n; ++p) particles[0].col(p) = init.sample(rng);
  particles[0].col(n - 1) = reference_state(0);
  observe_and_weigh(0);

  std::vector<int> free_anc;
  for (int i = 1; i < len; ++i) {
    const VectorXd u_prev = data.inputs.row(i - 1).transpose();

    detail::multinomial_resample(weights[i - 1], n - 1, rng, free_anc);
    for (int p = 0; p + 1 < n; ++p) ancestors[i][p] = free_anc[p];

    // Ancestor sampling for the reference slot.
    {
      VectorXd log_as(n);
      const VectorXd ref_i = reference_state(i);
      for (int p = 0; p < n; ++p) {
        const VectorXd mean =
            model.A * model.basis->eval(particles[i - 1].col(p), u_prev);
        log_as(p) = std::log(weights[i - 1](p)) + transition.log_density(ref_i - mean);
      }
      ancestors[i][n - 1] = detail::categorical(detail::normalize_log_weights(log_as, i), rng);
    }

    for (int p = 0; p + 1 < n; ++p) {
      const VectorXd mean =
          model.A * model.basis->eval(particles[i - 1].col(ancestors[i][p]), u_prev);
      particles[i].col(p) = mean + chol_q * standard_normal_vector(n_x, rng);
    }
    particles[i].col(n - 1) = reference_state(i);
    observe_and_weigh(i);
  }

  StateTrajectory out;
  out.states.resize(len, n_x);
  int j = detail::categorical(weights[len - 1], rng);
  for (int i = len - 1; i >= 0; --i) {
    out.states.row(i) = particles[i].col(j).transpose();
    if (i > 0) j = ancestors[i][j];
  }
  return out;
}

/// Initial trajectory for the Gibbs chain: one sweep conditioned on the
/// constant prior-mean path. The kernel is invariant regardless of the
/// starting point; burn-in absorbs the initialization.
inline StateTrajectory smc_draw(const BasisStateSpaceModel& model, const Dataset& data,
                                const GaussianPrior& initial_state_prior, int num_particles,
                                RngStream& rng) {
  const int len = static_cast<int>(data.length());
  StateTrajectory ref;
  ref.states = initial_state_prior.mean.transpose().replicate(len, 1);
  return csmc_sweep(model, data, ref, initial_state_prior, num_particles, rng);
}

/// Exact conditional posterior of (A, Q) given a state trajectory.
///
/// With regressors phi_t = phi(x_t, u_t) and targets z_t = x_{t+1}, the MNIW
/// prior updates in closed form:
///   Sigma_V = (V^-1 + sum phi phi^T)^-1
///   M_n     = (M V^-1 + sum z phi^T) Sigma_V
///   Lambda_n = Lambda + sum z z^T + M V^-1 M^T - M_n Sigma_V^-1 M_n^T
///   dof_n   = dof + #pairs
inline MNIWPrior mniw_posterior(const MNIWPrior& prior, const StateTrajectory& trajectory,
                                const Dataset& data, const Basis& basis) {
  const int n_x = static_cast<int>(prior.scale_matrix.rows());
  const int n_a = static_cast<int>(prior.coefficient_cov.rows());
  const int pairs = std::max(0, static_cast<int>(trajectory.length()) - 1);
  if (trajectory.length() > data.length()) {
    throw std::invalid_argument("mniw_posterior: trajectory longer than dataset");
  }

  MatrixXd phi_outer = MatrixXd::Zero(n_a, n_a);
  MatrixXd cross = MatrixXd::Zero(n_x, n_a);
  MatrixXd target_outer = MatrixXd::Zero(n_x, n_x);
  for (int i = 0; i < pairs; ++i) {
    const VectorXd phi = basis.eval(trajectory.states.row(i).transpose(),
                                    data.inputs.row(i).transpose());
    const VectorXd z = trajectory.states.row(i + 1).transpose();
    phi_outer.noalias() += phi * phi.transpose();
    cross.noalias() += z * phi.transpose();
    target_outer.noalias() += z * z.transpose();
  }

  const MatrixXd v_inv =
      prior.coefficient_cov.llt().solve(MatrixXd::Identity(n_a, n_a));
  MatrixXd precision = v_inv + phi_outer;
  precision = 0.5 * (precision + precision.transpose());
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(precision);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e14) {
      throw NumericalError("mniw_posterior: V^-1 + sum(phi phi^T) is singular (condition number " +
                           std::to_string(hi / std::max(lo, 1e-300)) + ")");
    }
  }
  Eigen::LLT<MatrixXd> llt(precision);
  const MatrixXd sigma_v = llt.solve(MatrixXd::Identity(n_a, n_a));
  const MatrixXd psi_bar = cross + prior.mean * v_inv;
  const MatrixXd mean_n = psi_bar * sigma_v;

  MatrixXd scale_n = prior.scale_matrix + target_outer +
                     prior.mean * v_inv * prior.mean.transpose() -
                     psi_bar * sigma_v * psi_bar.transpose();
  scale_n = 0.5 * (scale_n + scale_n.transpose());

  return MNIWPrior(std::move(scale_n), prior.dof + pairs, mean_n,
                   0.5 * (sigma_v + sigma_v.transpose()));
}

/// Draw (A, Q) from the conditional posterior given a sampled trajectory.
inline std::pair<MatrixXd, MatrixXd> sample_parameters(const MNIWPrior& prior,
                                                       const StateTrajectory& trajectory,
                                                       const Dataset& data, const Basis& basis,
                                                       RngStream& rng) {
  const MNIWPrior post = mniw_posterior(prior, trajectory, data, basis);
  MatrixXd q = sample_inverse_wishart(post.scale_matrix, post.dof, rng);
  MatrixXd a = sample_matrix_normal(post.mean, q, post.coefficient_cov, rng);
  return {std::move(a), std::move(q)};
}

/// Progress callback: (completed Gibbs iterations, total iterations).
using PGProgress = std::function<void(int, int)>;

/// Particle Gibbs with ancestor sampling. Alternates a conditional SMC sweep
/// of the state trajectory with a conjugate draw of (A, Q), runs
/// burn_in + K * thinning iterations and keeps every thinning-th trajectory
/// after burn-in. Returns exactly K aligned (model, trajectory) samples.
inline PosteriorSamples run_pg(const Dataset& data, const MNIWPrior& prior, const BasisPtr& basis,
                               const LinearObservation& obs,
                               const GaussianPrior& initial_state_prior, const MatrixXd& a_init,
                               const MatrixXd& q_init, const PGConfig& config,
                               const PGProgress& progress = {}) {
  config.validate();
  if (!basis) throw std::invalid_argument("run_pg: basis is required");
  RngStream rng(config.seed);
  RngStream init_rng = rng.fork("pg-init");
  RngStream sweep_rng = rng.fork("pg-sweeps");

  BasisStateSpaceModel model(a_init, q_init, basis, obs);
  StateTrajectory trajectory =
      smc_draw(model, data, initial_state_prior, config.num_particles, init_rng);

  PosteriorSamples out;
  out.config = config;
  out.data_digest = dataset_digest(data);
  out.models.reserve(config.num_samples);
  out.trajectories.reserve(config.num_samples);

  const int total = config.total_iterations();
  for (int it = 1; it <= total; ++it) {
    try {
      trajectory = csmc_sweep(model, data, trajectory, initial_state_prior,
                              config.num_particles, sweep_rng);
    } catch (const DegenerateWeightsError& e) {
      throw DegenerateWeightsError(
          "run_pg: degenerate weights in iteration " + std::to_string(it), e.time_index());
    }
    auto [a, q] = sample_parameters(prior, trajectory, data, *basis, sweep_rng);
    model = BasisStateSpaceModel(std::move(a), std::move(q), basis, obs);

    if (it > config.burn_in && (it - config.burn_in) % config.thinning == 0) {
      out.models.push_back(model);
      out.trajectories.push_back(trajectory);
    }
    if (progress && (it % 10 == 0 || it == total)) progress(it, total);
  }
  return out;
}

}  // namespace pgoc
