#pragma once

#include <stdexcept>
#include <string>

namespace stless {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad dimensions, bad parameters, bad config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Formula text that does not follow the grammar. Line and column are 1-based.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& message, int line, int column)
      : ValidationError(message + " at line " + std::to_string(line) + ", column " +
                        std::to_string(column)),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// The nesting ladder could not make progress (no feasible seed, stalled thresholds).
class LadderError : public Error {
 public:
  using Error::Error;
};

// A configured simulation budget was exhausted.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// A simulator failed to produce a signal. Never converted into a robustness value.
class SimulationError : public Error {
 public:
  using Error::Error;
};

// An out-of-process simulator violated the wire protocol.
class ProtocolError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

}  // namespace stless
