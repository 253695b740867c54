#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deskpilot {

/// Violated precondition on an argument (non-finite input, out-of-range step, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Not enough jointly valid measurements to run an estimator.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The normal matrix of a least-squares problem is (numerically) rank deficient.
class DegenerateGeometry : public std::runtime_error {
 public:
  explicit DegenerateGeometry(const std::string& what, double condition = 0.0)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Malformed text input. `line()` is 1-based; 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OptimizationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deskpilot
