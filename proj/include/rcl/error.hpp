#pragma once

#include <stdexcept>
#include <string>

namespace rcl {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, invalid numeric preconditions.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable input data (CSV, windows, corpora).
class DataError : public Error {
 public:
  using Error::Error;
};

// Parameter-container decoding failures.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcl
