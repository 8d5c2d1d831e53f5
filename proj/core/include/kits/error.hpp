#pragma once

#include <stdexcept>
#include <string>

namespace kits {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the CLI maps the error onto (1 config, 2 data, 3 numerical).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated operation precondition (non-scalar backward root, non-binary mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Non-finite objective hit while evaluating a function numerically.
class EvaluationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace kits
