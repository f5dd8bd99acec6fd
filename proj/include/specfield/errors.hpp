#pragma once

#include <stdexcept>
#include <string>

namespace specfield {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid grid, shape or domain mismatch.
class GridError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an argument outside the documented contract.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A harmonic field that should transform to a real field does not.
class NonRealResult : public Error {
 public:
  using Error::Error;
};

/// Operator turned out not to be positive definite (CG breakdown, bad pivot).
class NotPositiveError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_residual, int iterations)
      : Error(what), last_residual_(last_residual), iterations_(iterations) {}
  double last_residual() const noexcept { return last_residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double last_residual_;
  int iterations_;
};

/// Dense path requested for an operator larger than the configured cap.
class CapExceeded : public Error {
 public:
  using Error::Error;
};

/// Spectrum is singular at a lattice mode (f(k) == 0 on-grid) or non-finite.
class SpectrumError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable or not in the expected format.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace specfield
