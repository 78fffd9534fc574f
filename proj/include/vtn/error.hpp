#pragma once

#include <stdexcept>
#include <string>

namespace vtn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required, or a numeric blow-up.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong state (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration or dimension mismatch between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Index outside the valid range of a sequence.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind {
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kCrcMismatch,
  kIntegrity,
};

const char* to_string(LoadErrorKind kind);

/// Failure while reading one of the binary file formats.
class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace vtn
