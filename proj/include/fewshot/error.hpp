#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fewshot {

/// Process exit codes shared by every command-line entry point.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kNumeric = 2,
  kIo = 3,
};

/// Malformed input, violated invariant or bad configuration.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Manifest syntax or content error tied to a line of the input document.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A non-finite value appeared in a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fewshot
