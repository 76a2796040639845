#pragma once

#include <stdexcept>
#include <string>

namespace rdpc {

// Mismatched sizes, insufficient data, malformed inputs.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid parameter values (weights, boxes, config keys).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical failure while factorizing the lower-level KKT system.
struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Robust control problem is infeasible; carries the worst row for diagnostics.
struct InfeasibleError : std::runtime_error {
  InfeasibleError(const std::string& msg, std::string row, double violation)
      : std::runtime_error(msg), worst_row(std::move(row)), max_violation(violation) {}
  std::string worst_row;
  double max_violation = 0.0;
};

// Solver terminated without an optimum (unbounded or iteration limit).
struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rdpc
