#pragma once

#include <stdexcept>
#include <string>

namespace resfeat {

// Shape/channel mismatches between tensors and operators.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Unsupported kernel sizes, strides, invalid NetworkSpec combinations.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// API misuse (e.g. backward before forward).
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

// File format / filesystem problems.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

// Violated operation preconditions (e.g. negative feature input).
struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& msg) : std::runtime_error("precondition violated: " + msg) {}
};

}  // namespace resfeat
