#pragma once

#include <stdexcept>
#include <string>

namespace gnmap {

// Precondition and shape violations throw std::invalid_argument. The types
// below cover failures that callers (mainly the CLI) dispatch on.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration. The CLI exits with code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated, or version-incompatible file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gnmap
