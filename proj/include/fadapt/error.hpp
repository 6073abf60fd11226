#pragma once

#include <stdexcept>
#include <string>

namespace fadapt {

// Exception hierarchy. The CLI maps these onto exit codes (see harness.hpp).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch in a tensor operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model / run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (loss, f(x) in a gradient check).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A command was run before the command that produces its inputs.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& what, std::string required_command)
      : Error(what), required_command_(std::move(required_command)) {}
  const std::string& required_command() const { return required_command_; }

 private:
  std::string required_command_;
};

/// File system / I/O failure.
class EnvironmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace fadapt
