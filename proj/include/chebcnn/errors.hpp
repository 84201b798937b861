#pragma once

#include <stdexcept>
#include <string>

namespace chebcnn {

// An argument violates an operation's contract.
struct InvalidInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Shape or extent mismatch between operands; message names both shapes.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerically degenerate input, e.g. a zero-variance image.
struct DegenerateInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A forward operation produced NaN or Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem or decode failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed, truncated, or version-mismatched serialized data.
struct CorruptDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config file problem; message carries "file:line: what".
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// backward() invoked again on an already-traversed tape.
struct AccumulationError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace chebcnn
