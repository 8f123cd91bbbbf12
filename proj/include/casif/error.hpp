#pragma once

#include <stdexcept>
#include <string>

namespace casif {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or contradictory settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (logs, datasets, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Violated function precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace casif
