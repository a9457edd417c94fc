// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qloop {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape mismatch or non-finite entries.
struct DimensionError : Error {
  using Error::Error;
};

/// Parameter outside its mathematical domain (non-PD matrix, |alpha| <= 1, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Pivot below tolerance in a linear solve.
struct SingularSystemError : Error {
  using Error::Error;
};

/// Iteration budget exhausted or a contraction precondition violated.
struct ConvergenceError : Error {
  using Error::Error;
};

/// Malformed experiment configuration (CLI layer maps this to exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace qloop
