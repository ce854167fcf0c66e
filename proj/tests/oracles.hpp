// Test-only reference implementations: scalar Kalman filtering/smoothing,
// forward-filter backward-sampling, and a two-sample Kolmogorov-Smirnov
// statistic. Straight-line textbook code, deliberately independent of the
// library's particle machinery.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pgoc/basis.hpp"
#include "pgoc/rng.hpp"

namespace oracles {

/// phi(x, u) = [x; u] (optionally just [x]), for linear test models.
class LinearBasis final : public pgoc::Basis {
 public:
  LinearBasis(int n_x, int n_u, bool include_input)
      : n_x_(n_x), n_u_(n_u), include_input_(include_input) {}

  int output_dim() const override { return n_x_ + (include_input_ ? n_u_ : 0); }
  int state_dim() const override { return n_x_; }
  int input_dim() const override { return n_u_; }
  std::string id() const override { return "linear-test"; }

  Eigen::VectorXd eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override {
    Eigen::VectorXd phi(output_dim());
    phi.head(n_x_) = x;
    if (include_input_) phi.tail(n_u_) = u;
    return phi;
  }
  Eigen::MatrixXd jacobian_state(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(output_dim(), n_x_);
    j.topRows(n_x_) = Eigen::MatrixXd::Identity(n_x_, n_x_);
    return j;
  }
  Eigen::MatrixXd jacobian_input(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(output_dim(), n_u_);
    if (include_input_) j.bottomRows(n_u_) = Eigen::MatrixXd::Identity(n_u_, n_u_);
    return j;
  }

 private:
  int n_x_, n_u_;
  bool include_input_;
};

/// Scalar linear-Gaussian state-space model
///   x_{t+1} = a x_t + b u_t + v,  v ~ N(0, q)
///   y_t     = c x_t + w,          w ~ N(0, r)
/// with x_0 ~ N(m0, p0).
struct ScalarSSM {
  double a = 0.9;
  double b = 0.0;
  double c = 1.0;
  double q = 0.1;
  double r = 0.1;
  double m0 = 0.0;
  double p0 = 1.0;
};

struct ScalarFilterResult {
  std::vector<double> filt_mean, filt_var;  // p(x_t | y_0..t)
  std::vector<double> pred_mean, pred_var;  // p(x_t | y_0..t-1)
  double log_likelihood = 0.0;
};

inline ScalarFilterResult kalman_filter(const ScalarSSM& m, const std::vector<double>& u,
                                        const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (u.size() != n) throw std::invalid_argument("kalman_filter: u and y sizes differ");
  ScalarFilterResult out;
  out.filt_mean.resize(n);
  out.filt_var.resize(n);
  out.pred_mean.resize(n);
  out.pred_var.resize(n);
  double mp = m.m0, pp = m.p0;
  for (std::size_t t = 0; t < n; ++t) {
    out.pred_mean[t] = mp;
    out.pred_var[t] = pp;
    const double s = m.c * pp * m.c + m.r;
    const double k = pp * m.c / s;
    const double innov = y[t] - m.c * mp;
    out.log_likelihood += -0.5 * (std::log(2.0 * std::numbers::pi * s) + innov * innov / s);
    const double mf = mp + k * innov;
    const double pf = (1.0 - k * m.c) * pp;
    out.filt_mean[t] = mf;
    out.filt_var[t] = pf;
    mp = m.a * mf + m.b * u[t];
    pp = m.a * pf * m.a + m.q;
  }
  return out;
}

struct ScalarSmootherResult {
  std::vector<double> mean, var;  // p(x_t | y_0..n-1)
};

/// Rauch-Tung-Striebel backward pass.
inline ScalarSmootherResult rts_smoother(const ScalarSSM& m, const std::vector<double>& u,
                                         const std::vector<double>& y) {
  const ScalarFilterResult f = kalman_filter(m, u, y);
  const std::size_t n = y.size();
  ScalarSmootherResult out;
  out.mean.resize(n);
  out.var.resize(n);
  out.mean[n - 1] = f.filt_mean[n - 1];
  out.var[n - 1] = f.filt_var[n - 1];
  for (int t = static_cast<int>(n) - 2; t >= 0; --t) {
    const double pred_var = m.a * f.filt_var[t] * m.a + m.q;
    const double pred_mean = m.a * f.filt_mean[t] + m.b * u[t];
    const double g = f.filt_var[t] * m.a / pred_var;
    out.mean[t] = f.filt_mean[t] + g * (out.mean[t + 1] - pred_mean);
    out.var[t] = f.filt_var[t] + g * g * (out.var[t + 1] - pred_var);
  }
  return out;
}

/// Forward-filter backward-sampling: one exact draw from p(x_0..n-1 | y).
inline std::vector<double> ffbs_draw(const ScalarSSM& m, const std::vector<double>& u,
                                     const std::vector<double>& y, pgoc::RngStream& rng) {
  const ScalarFilterResult f = kalman_filter(m, u, y);
  const std::size_t n = y.size();
  std::vector<double> x(n);
  x[n - 1] = f.filt_mean[n - 1] + std::sqrt(f.filt_var[n - 1]) * rng.normal();
  for (int t = static_cast<int>(n) - 2; t >= 0; --t) {
    const double pred_var = m.a * f.filt_var[t] * m.a + m.q;
    const double pred_mean = m.a * f.filt_mean[t] + m.b * u[t];
    const double g = f.filt_var[t] * m.a / pred_var;
    const double mean = f.filt_mean[t] + g * (x[t + 1] - pred_mean);
    const double var = f.filt_var[t] - g * m.a * f.filt_var[t];
    x[t] = mean + std::sqrt(std::max(var, 0.0)) * rng.normal();
  }
  return x;
}

/// Simulate the scalar model; returns (states, outputs).
inline std::pair<std::vector<double>, std::vector<double>> simulate_scalar(
    const ScalarSSM& m, const std::vector<double>& u, pgoc::RngStream& rng) {
  const std::size_t n = u.size();
  std::vector<double> x(n), y(n);
  double state = m.m0 + std::sqrt(m.p0) * rng.normal();
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = state;
    y[t] = m.c * state + std::sqrt(m.r) * rng.normal();
    state = m.a * state + m.b * u[t] + std::sqrt(m.q) * rng.normal();
  }
  return {x, y};
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F1 - F2|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

/// One-sample KS statistic against a reference CDF given on a sorted grid
/// (grid value -> cdf value), with linear interpolation.
inline double ks_one_sample(std::vector<double> samples, const std::vector<double>& grid,
                            const std::vector<double>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  auto cdf_at = [&](double x) {
    if (x <= grid.front()) return 0.0;
    if (x >= grid.back()) return 1.0;
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    return cdf[lo] + w * (cdf[hi] - cdf[lo]);
  };
  double d = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double f = cdf_at(samples[k]);
    d = std::max(d, std::abs(f - k / n));
    d = std::max(d, std::abs(f - (k + 1) / n));
  }
  return d;
}

/// Lag-1 autocorrelation of a series.
inline double lag1_autocorrelation(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    if (i + 1 < n) num += (x[i] - mean) * (x[i + 1] - mean);
  }
  return num / den;
}

/// Standard error of a chain mean via batch means (robust to autocorrelation).
inline double batch_means_se(const std::vector<double>& x, int num_batches) {
  const std::size_t n = x.size();
  const std::size_t batch = n / num_batches;
  std::vector<double> means;
  for (int b = 0; b < num_batches; ++b) {
    double m = 0.0;
    for (std::size_t i = b * batch; i < (b + 1) * batch; ++i) m += x[i];
    means.push_back(m / batch);
  }
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= means.size();
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand);
  var /= (means.size() - 1);
  return std::sqrt(var / means.size());
}

}  // namespace oracles
