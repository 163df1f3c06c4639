#pragma once

#include <stdexcept>
#include <string>

namespace stanceforge {

/// Input violates a documented precondition or format (CLI exit code 1).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system or remote endpoint failure (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stanceforge
