// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tce {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or malformed arguments to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, a degenerate embedding, or a diverging loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Bad bytes or bad records in an input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tce
