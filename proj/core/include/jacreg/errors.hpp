#pragma once

#include <stdexcept>
#include <string>

namespace jacreg {

// Base of every failure raised by the library. The command-line driver maps
// the three subclasses onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (bad parameter, missing path).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that violates a type contract: malformed files, grid mismatch,
// non-finite voxels, empty regions where content is required.
class DataError : public Error {
 public:
  using Error::Error;
};

// Computation produced a non-finite or otherwise unusable value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace jacreg
