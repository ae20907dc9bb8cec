#pragma once

#include <stdexcept>
#include <string>

namespace vvc {

/// Malformed input file (JSON or CSV).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feeder is not a spanning tree rooted at a single head node.
class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ohmic impedances given without the bases needed to convert them.
class UnitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Injection magnitudes outside the plausible range accepted by the solver.
class InjectionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A required power flow solve did not converge.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int column = -1)
      : std::runtime_error(what), column_(column) {}

  /// Jacobian column whose perturbed solve failed, or -1.
  int column() const noexcept { return column_; }

 private:
  int column_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Scenario data inconsistent with the feeder (unknown node, negative demand, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vvc
