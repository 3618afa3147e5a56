#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dplab {

/// Spatial point; unused trailing coordinates stay zero.
using Point = std::array<double, 3>;

constexpr int kMaxDim = 3;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (non-positive radius, t <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Requested feature is finer than the grid can represent.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Parameter hypothesis of an estimate or solver violated.
class HypothesisError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A nonlinear solve did not converge.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

/// Broken internal invariant; indicates a bug, never bad input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline double distance(const Point& a, const Point& b, int dim) {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw PreconditionError(msg);
}

}  // namespace dplab
