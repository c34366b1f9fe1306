// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dpde {

/// Base of all library errors. `exit_code()` maps onto the CLI contract:
/// 2 for validation problems, 3 for numerical failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class OutOfDomain : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFiniteLoss : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class PriceOutOfBounds : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class BudgetExceeded : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace dpde
