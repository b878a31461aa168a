#pragma once

#include <stdexcept>
#include <string>

namespace mnarhmm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record or dataset does not supply what a model component needs.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Recursions or solvers produced an unusable value (underflow, NaN).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A computation would exceed a hard size guard.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A state received no posterior mass where an M-step needs some.
class DegenerateStateError : public Error {
 public:
  using Error::Error;
};

/// Design or information matrix is singular.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input: files, configuration, constraint requests.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A likelihood-ratio request whose models are not nested.
class NestingError : public InputError {
 public:
  using InputError::InputError;
};

/// Observed information is not positive definite.
class SingularInformationError : public RankError {
 public:
  using RankError::RankError;
};

}  // namespace mnarhmm
