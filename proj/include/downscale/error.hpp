#pragma once

#include <stdexcept>
#include <string>

namespace downscale {

/// Base class for every error raised by the library. Messages are prefixed
/// with the name of the operation that failed, e.g. "load_coarse_csv: ...".
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input documents (CSV, JSON).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Inputs that parse but violate a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite values, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Wraps an error raised inside one pipeline phase.
class PhaseError : public Error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : Error(phase + ": " + what), phase_(std::move(phase)) {}

  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

}  // namespace downscale
