#pragma once

#include <stdexcept>
#include <string>

namespace tempoflow {

// Caller broke a documented precondition (shape, range, dimension mismatch).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or missing configuration (CLI flags, JSON config).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data. `kind` is a short stable tag, e.g. "bad_magic".
class DataError : public std::runtime_error {
 public:
  DataError(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace tempoflow
