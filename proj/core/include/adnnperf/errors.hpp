#pragma once

#include <stdexcept>
#include <string>

namespace adnnperf {

// Error hierarchy. Everything thrown by this library derives from Error so
// callers can catch one type at the CLI boundary and map it to an exit code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent configuration (bad JSON, missing keys, values
// out of range). CLI maps this to exit code 2.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Numerical failure during training or evaluation (non-finite loss, exploded
// gradients). CLI maps this to exit code 3.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Shape mismatch or structural misuse of the tensor/graph API. These are
// programming errors, not user errors, and indicate a bug in the caller.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Artifact problems: missing checkpoint, hash mismatch, truncated file.
struct ArtifactError : Error {
  explicit ArtifactError(const std::string& msg) : Error(msg) {}
};

}  // namespace adnnperf
