#pragma once

#include <stdexcept>
#include <string>

namespace strata_reg {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or configuration violation (bad sizes, bad parameters).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Singular or numerically unusable matrix.
class SingularError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampler could not produce a draw within its proposal budget.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// A sample-size gate of the active learner is not met.
class GateError : public Error {
 public:
  using Error::Error;
};

}  // namespace strata_reg
