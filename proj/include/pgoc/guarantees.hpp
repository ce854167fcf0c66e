#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgoc/errors.hpp"
#include "pgoc/ocp.hpp"
#include "pgoc/rollout.hpp"

namespace pgoc {

/// What the user asks a certificate to establish: K analysis samples,
/// confidence parameter beta, and the target satisfaction probability delta
/// the certified level is compared against (satisfied when 1 - level >= delta).
struct CertificationRequest {
  int num_samples = 0;
  double beta = 0.01;
  double delta = 0.0;

  void validate() const {
    if (num_samples < 1) throw std::invalid_argument("CertificationRequest: K must be >= 1");
    if (!(beta > 0.0) || !(beta < 1.0)) {
      throw std::invalid_argument("CertificationRequest: beta must lie in (0, 1)");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) {
      throw std::invalid_argument("CertificationRequest: delta must lie in (0, 1)");
    }
  }
};

enum class CertificateKind { kCostBound, kPolicyConstraints, kOcpConstraints };

inline std::string to_string(CertificateKind kind) {
  switch (kind) {
    case CertificateKind::kCostBound: return "cost-bound";
    case CertificateKind::kPolicyConstraints: return "policy-constraints";
    case CertificateKind::kOcpConstraints: return "ocp-constraints";
  }
  return "unknown";
}

/// Probabilistic certificate: with confidence 1 - beta, the violation
/// probability of the certified property is at most `level`.
struct Certificate {
  CertificateKind kind = CertificateKind::kPolicyConstraints;
  int num_samples = 0;        // K
  double beta = 0.0;
  int support_size = -1;      // s; meaningful for the ocp-constraints kind only
  double level = 0.0;         // 1 - beta^(1/K) or epsilon(s)
  double bound_value = 0.0;   // certified cost bound for the cost-bound kind
};

/// A-priori violation level 1 - beta^(1/K) certified by the max-of-K bound.
inline double theorem1_level(int num_samples, double beta) {
  if (num_samples < 1) throw std::invalid_argument("theorem1_level: K must be >= 1");
  if (!(beta > 0.0) || !(beta < 1.0)) {
    throw std::invalid_argument("theorem1_level: beta must lie in (0, 1)");
  }
  return 1.0 - std::exp(std::log(beta) / static_cast<double>(num_samples));
}

/// Certified upper cost bound max_k J^[k] at level 1 - beta^(1/K).
inline Certificate certify_cost_bound(const std::vector<double>& costs, double beta) {
  Certificate cert;
  cert.kind = CertificateKind::kCostBound;
  cert.num_samples = static_cast<int>(costs.size());
  cert.beta = beta;
  cert.bound_value = max_cost(costs);
  cert.level = theorem1_level(cert.num_samples, beta);
  return cert;
}

/// Outcome of a policy-constraint certification: either a certificate, or a
/// refusal listing the scenario indices whose rollouts violate the constraint.
struct PolicyCertification {
  bool certified = false;
  Certificate certificate;
  std::vector<int> violating_indices;
};

/// Certify h <= 0 for a fixed control law from its K scenario rollouts. The
/// rollouts must come from samples the law was not designed on; the CLI
/// enforces that separation at the file level.
inline PolicyCertification certify_policy_constraints(
    const std::vector<RolloutResult>& rollouts,
    const std::function<double(const RolloutResult&)>& constraint, int num_samples,
    double beta) {
  if (!constraint) throw std::invalid_argument("certify_policy_constraints: constraint required");
  if (static_cast<int>(rollouts.size()) != num_samples || num_samples < 1) {
    throw std::invalid_argument("certify_policy_constraints: need exactly K rollouts");
  }
  PolicyCertification out;
  for (int k = 0; k < num_samples; ++k) {
    if (constraint(rollouts[k]) > 0.0) out.violating_indices.push_back(k);
  }
  if (!out.violating_indices.empty()) return out;
  out.certified = true;
  out.certificate.kind = CertificateKind::kPolicyConstraints;
  out.certificate.num_samples = num_samples;
  out.certificate.beta = beta;
  out.certificate.level = theorem1_level(num_samples, beta);
  return out;
}

namespace detail {

inline double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Sign of binom(K,s)(1-v)^(K-s) - (beta/K) sum_{m=s}^{K-1} binom(m,s)(1-v)^(m-s),
// evaluated as a difference of logs so K in the hundreds cannot overflow.
inline int epsilon_polynomial_sign(int K, int s, double beta, double v) {
  const double log1mv = std::log1p(-v);
  const double lhs = log_binomial(K, s) + (K - s) * log1mv;
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(K - s);
  for (int m = s; m <= K - 1; ++m) {
    const double t = log_binomial(m, s) + (m - s) * log1mv;
    terms.push_back(t);
    max_term = std::max(max_term, t);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  const double rhs = std::log(beta / K) + max_term + std::log(acc);
  if (lhs > rhs) return 1;
  if (lhs < rhs) return -1;
  return 0;
}

}  // namespace detail

/// A-posteriori violation level epsilon(s): the root in (0, 1) of
///   binom(K,s)(1-v)^(K-s) - (beta/K) sum_{m=s}^{K-1} binom(m,s)(1-v)^(m-s) = 0.
/// Bracket by scanning v in {1e-9, 0.1, ..., 0.9, 1-1e-9}, then bisect. The
/// returned root is accurate to well below the documented 1e-9.
inline double epsilon_of_s(int num_samples, int support_size, double beta) {
  const int k = num_samples;
  const int s = support_size;
  if (k < 1) throw std::invalid_argument("epsilon_of_s: K must be >= 1");
  if (s < 0 || s >= k) throw std::invalid_argument("epsilon_of_s: need 0 <= s < K");
  if (!(beta > 0.0) || !(beta < 1.0)) {
    throw std::invalid_argument("epsilon_of_s: beta must lie in (0, 1)");
  }

  std::vector<double> grid;
  grid.push_back(1e-9);
  for (int i = 1; i <= 9; ++i) grid.push_back(0.1 * i);
  grid.push_back(1.0 - 1e-9);

  double lo = 0.0, hi = 0.0;
  int sign_lo = 0;
  bool bracketed = false;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const int sa = detail::epsilon_polynomial_sign(k, s, beta, grid[i]);
    const int sb = detail::epsilon_polynomial_sign(k, s, beta, grid[i + 1]);
    if (sa == 0) return grid[i];
    if (sb == 0) return grid[i + 1];
    if (sa != sb) {
      lo = grid[i];
      hi = grid[i + 1];
      sign_lo = sa;
      bracketed = true;
      break;
    }
  }
  if (!bracketed) {
    throw NumericalError("epsilon_of_s: root not bracketed for K=" + std::to_string(k) +
                         ", s=" + std::to_string(s) + ", beta=" + std::to_string(beta));
  }
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // interval at machine resolution
    const int sm = detail::epsilon_polynomial_sign(k, s, beta, mid);
    if (sm == 0) return mid;
    if (sm == sign_lo) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Result of greedy support estimation. `support` holds the scenario indices
/// whose constraints could not be removed without moving the solution;
/// `verification_delta` is the max-norm distance between the incumbent and a
/// final re-solve with only the support constraints active.
struct GreedySupportResult {
  std::vector<int> support;
  double verification_delta = 0.0;
  int solves = 0;
};

constexpr double kSameSolutionTolerance = 1e-6;  // max-norm; two orders above solver tol

/// Greedy support-set estimation: walk scenarios in index order, tentatively
/// deactivate each scenario's constraints and re-solve from the same fixed
/// initialization; a scenario stays removed when the re-solve reproduces the
/// incumbent within kSameSolutionTolerance. Every solve keeps the full
/// sample-average objective. The incumbent must be the solver's output on the
/// fully constrained problem.
inline GreedySupportResult greedy_support(const ScenarioOCP& problem, const MatrixXd& incumbent,
                                          const SolverConfig& config) {
  problem.validate();
  const int k = static_cast<int>(problem.scenarios.size());
  std::vector<bool> active(k, true);
  GreedySupportResult result;

  auto max_norm_delta = [&](const MatrixXd& u) {
    return (u - incumbent).cwiseAbs().maxCoeff();
  };

  for (int i = 0; i < k; ++i) {
    active[i] = false;
    Solution probe = solve_with_active_constraints(problem, config, active);
    ++result.solves;
    if (!probe.converged) {
      throw SolverError("greedy_support: probe solve for scenario " + std::to_string(i) +
                        " did not converge after removing " +
                        std::to_string(k - 1 - std::count(active.begin(), active.end(), true)) +
                        " scenarios");
    }
    if (max_norm_delta(probe.u_star) <= kSameSolutionTolerance) {
      continue;  // removal accepted
    }
    active[i] = true;  // constraint is load-bearing
  }

  for (int i = 0; i < k; ++i) {
    if (active[i]) result.support.push_back(i);
  }

  Solution check = solve_with_active_constraints(problem, config, active);
  ++result.solves;
  result.verification_delta = max_norm_delta(check.u_star);
  if (result.verification_delta > kSameSolutionTolerance) {
    throw SolverError("greedy_support: support set fails to reproduce the incumbent (delta " +
                      std::to_string(result.verification_delta) + ")");
  }
  return result;
}

}  // namespace pgoc
