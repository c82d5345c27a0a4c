#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace callig {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kConfiguration = 2,
  kDivergence = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kConfiguration; }
};

// Invalid configuration, incompatible shapes between dataset and model, bad
// template, unknown config key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not fit the operation.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Argument outside the mathematical domain of an operation (log of a
// nonpositive value, zero-norm quaternion).
class DomainError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() from a non-scalar tensor.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

// A NaN/inf appeared in the objective or the policy output.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::map<std::string, double> components = {})
      : Error(what), components_(std::move(components)) {}
  ExitCode exit_code() const override { return ExitCode::kDivergence; }
  const std::map<std::string, double>& components() const { return components_; }

 private:
  std::map<std::string, double> components_;
};

}  // namespace callig
