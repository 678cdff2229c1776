#pragma once

#include <stdexcept>
#include <string>

namespace faceforge {

/// Caller violated an operation's preconditions (bad shape, bad axis, bad argument).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data could not be parsed or failed schema validation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration is internally inconsistent or cannot be satisfied by the data.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace faceforge
