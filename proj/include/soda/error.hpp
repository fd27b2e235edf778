#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace soda {

// Precondition violated by a caller-supplied value (negative dose, bad id...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// State vectors or records that do not line up with the declared schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or unreadable configuration (config files, k > reference size...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownDrug : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite gradients or other unrecoverable optimisation failures.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number of the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace soda
