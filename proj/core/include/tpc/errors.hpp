#pragma once

#include <stdexcept>
#include <string>

namespace tpc {

// Error families map onto CLI exit codes: config 1, data 2, numerical 3.
// Contract violations (shape mismatches, misuse of the API) are programming
// errors and surface as ShapeError / ContractError.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by training when the loss stops being finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericalError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace tpc
