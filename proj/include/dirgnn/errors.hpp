#pragma once

#include <stdexcept>
#include <string>

namespace dirgnn {

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced by a forward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of an operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dirgnn
