#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace pgoc {

namespace detail {

// SplitMix64 finalizer. Counter-based: the n-th output is a pure function of
// (key, n), so streams can be forked and replayed without shared state.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Seedable counter-based random stream. Every stochastic operation in the
/// library takes one of these explicitly; there is no global generator.
/// Child streams derived via substream()/fork() are statistically independent
/// and depend only on the parent key and the chosen index/tag, which makes
/// per-task streams reproducible regardless of evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : key_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  /// Derived stream for sub-task `index`; independent of draws made so far.
  RngStream substream(std::uint64_t index) const {
    RngStream child(0);
    child.key_ = detail::mix64(detail::mix64(key_ ^ 0xa24baed4963ee407ULL) + index);
    child.counter_ = 0;
    return child;
  }

  /// Derived stream keyed by a human-readable tag, e.g. fork("scenarios").
  RngStream fork(std::string_view tag) const { return substream(detail::fnv1a64(tag)); }

  std::uint64_t next_bits() { return detail::mix64(key_ + ++counter_ * 0x9e3779b97f4a7c15ULL); }

  /// Uniform draw in the open-closed interval (0, 1].
  double uniform01() {
    return static_cast<double>((next_bits() >> 11) + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes two uniforms per draw and keeps
  /// no cached half, so forked streams never observe stale state.
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape < 1 handled by the
  /// boost Gamma(shape+1) * U^(1/shape).
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform01(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace pgoc
