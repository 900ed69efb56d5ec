#pragma once

#include <stdexcept>
#include <string>

namespace effnas {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimension counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain of an operation (division by zero, bad label, tau <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autograd machinery (non-scalar loss, backward twice, ...).
class AutogradError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation on finite inputs.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed files (checkpoints, CSV tables, architecture JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace effnas
