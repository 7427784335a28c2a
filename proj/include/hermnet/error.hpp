#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hermnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested tensor operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numerical precondition was violated (zero divisor, singular system, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the file name and 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// A structure contains an element the model has no parameters for.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace hermnet
