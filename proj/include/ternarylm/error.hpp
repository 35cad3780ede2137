#pragma once

#include <stdexcept>
#include <string>

namespace ternarylm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, reused graph, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented invariant was violated at runtime (e.g. a non-positive scale).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ternarylm
