#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace foreranker {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied arguments that violate a precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A file or record does not follow its declared format.
class ParseError : public Error {
 public:
  using Error::Error;
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace foreranker
