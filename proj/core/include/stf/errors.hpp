#pragma once

#include <stdexcept>
#include <string>

namespace stf {

// Base class for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape or dimension mismatch; the message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument values (bad index, bad op kind, out-of-range scale, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required (NaN gradients, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

// Bad or missing configuration key/value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace stf
