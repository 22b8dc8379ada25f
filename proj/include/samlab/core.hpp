#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samlab {

/// Flat parameter vector θ. Every optimizer and probe works on this type.
using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using Batch = std::span<const std::size_t>;

/// Index list 0..n-1.
std::vector<std::size_t> full_batch(std::size_t n);

// Error taxonomy. The CLI maps these onto exit codes.

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite iterate or gradient during training. step is the index of the
/// update that failed, or -1 when raised outside a step loop.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, long step = -1)
      : NumericalError(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pairwise (cascade) summation; result is independent of thread count
/// because callers always reduce a fixed-order array.
double pairwise_sum(std::span<const double> xs);
inline double pairwise_mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

}  // namespace samlab
