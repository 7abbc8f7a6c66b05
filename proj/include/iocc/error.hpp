#pragma once

#include <stdexcept>
#include <string>

namespace iocc {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (dataset, checkpoint, problem JSON).
class ParseError : public Error {
public:
  using Error::Error;
};

// Tensor shapes that do not line up.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Invalid user-supplied configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Non-finite values or degenerate quantities met during computation.
class NumericError : public Error {
public:
  using Error::Error;
};

} // namespace iocc
