#pragma once

#include <stdexcept>
#include <string>

namespace pgoc {

/// Numerical failure (singular matrix, lost bracket, failed factorization).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// All particle weights underflowed to zero at one filter step.
class DegenerateWeightsError : public std::runtime_error {
 public:
  DegenerateWeightsError(const std::string& what, int time_index)
      : std::runtime_error(what + " (time index " + std::to_string(time_index) + ")"),
        time_index_(time_index) {}
  int time_index() const { return time_index_; }

 private:
  int time_index_;
};

/// A simulated state left the admissible range during a rollout.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int time_index)
      : std::runtime_error(what + " (time index " + std::to_string(time_index) + ")"),
        time_index_(time_index) {}
  int time_index() const { return time_index_; }

 private:
  int time_index_;
};

/// Optimizer could not complete a requested solve.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

/// A pipeline stage failed; carries the stage name for diagnostics.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace pgoc
