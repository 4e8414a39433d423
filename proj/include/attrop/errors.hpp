#pragma once

#include <stdexcept>
#include <string>

namespace attrop {

// Root of every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad files, inconsistent splits, unknown names.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not agree.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Singular operators, non-finite losses or gradients.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFiniteError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A property that must hold by construction did not (e.g. evaluation subset dominance).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace attrop
