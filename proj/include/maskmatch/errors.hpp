#pragma once

#include <stdexcept>
#include <string>

namespace maskmatch {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A dataset source is missing or malformed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity appeared in activations or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint could not be read back.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskmatch
