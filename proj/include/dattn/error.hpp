#pragma once

#include <stdexcept>
#include <string>

namespace dattn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A gradient norm too small to define an angle or ratio.
class DegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation requested on a layer that does not support it (e.g. branch
// gradients of a standard attention layer).
class CapabilityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class TheoryCheckError : public Error {
 public:
  using Error::Error;
};

// Process exit code for an exception escaping a CLI subcommand.
int exit_code_for(const std::exception& e);

}  // namespace dattn
