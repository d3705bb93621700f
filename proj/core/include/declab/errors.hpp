#pragma once

#include <stdexcept>
#include <string>

namespace declab {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not satisfy an operation's preconditions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad field values, unknown names, empty task lists).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A call violates an operation contract (non-scalar loss, empty target, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text input. Message carries the byte offset when known.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace declab
