#pragma once

#include <stdexcept>
#include <string>

namespace cerberus {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or extent mismatch between tensors / rasters.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A supervision mask selected no pixels; the caller should skip the batch.
class EmptySupervisionError : public Error {
 public:
  explicit EmptySupervisionError(const std::string& msg) : Error(msg) {}
};

// Malformed file content; message carries the offending path.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Filesystem / OS level failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A computation produced NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace cerberus
