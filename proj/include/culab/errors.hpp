#pragma once

#include <stdexcept>
#include <string>

namespace culab {

// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Input outside the mathematical domain of an operation (log of a
// non-positive value, division by zero, lambda <= 0, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// API contract violated by the caller (non-scalar loss, missing gradient,
// K < 2 where modes are required, bad probability vector, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// A matrix required to be symmetric positive definite is not.
class DefinitenessError : public std::runtime_error {
 public:
  explicit DefinitenessError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file contents; message names the offending line/record.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid run or generation configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure at runtime (non-convergent quadrature, NaN loss, ...).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace culab
