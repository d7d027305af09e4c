#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rulmdp {

// Base for every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Bad arguments or configuration (exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training or optimization (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised from callbacks to abandon a run early.
class Cancelled : public Error {
 public:
  Cancelled() : Error("run cancelled") {}
};

}  // namespace rulmdp
