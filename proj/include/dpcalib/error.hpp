#pragma once

#include <stdexcept>
#include <string>

namespace dpcalib {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (x <= 0, NaN, J out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Elicitation input that violates a feasibility inequality or is malformed.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Iterative evaluation did not converge inside its budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside the calibration machinery (non-finite node value, eigen-solver failure).
class CalibrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpcalib
