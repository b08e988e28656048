#pragma once

#include <stdexcept>
#include <string>

namespace cmkd {

// Operand shapes do not conform (or an index is out of range).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A value left the finite range, or an operation hit the stability floor.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of the gradient tape (non-scalar loss, second backward pass).
struct TapeError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid configuration (bad dims, weights, option values).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File parsing / serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cmkd
