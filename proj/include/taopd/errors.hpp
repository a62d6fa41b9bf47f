#pragma once

#include <stdexcept>
#include <string>

namespace taopd {

/// Bad arguments or preconditions (maps to CLI exit code 1).
struct DomainError : std::invalid_argument {
  explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Malformed or inconsistent input data (maps to CLI exit code 2).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A support restriction retained no probability mass.
struct DegenerateSupportError : ValidationError {
  explicit DegenerateSupportError(const std::string& msg) : ValidationError(msg) {}
};

/// Numerical failure such as a rank-deficient solve (CLI exit code 3).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace taopd
