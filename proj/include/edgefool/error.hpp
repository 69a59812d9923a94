#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace edgefool {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/image dimensions disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value left the finite range during an iterative computation.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t iteration = -1)
      : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
        iteration_(iteration) {}

  std::ptrdiff_t iteration() const { return iteration_; }

 private:
  std::ptrdiff_t iteration_;
};

// Malformed or incompatible files (packed weights, images, JSON documents).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace edgefool
