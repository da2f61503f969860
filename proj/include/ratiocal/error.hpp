#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ratiocal {

// Caller passed something outside an operation's domain.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation is well-formed but not defined for this configuration
// (e.g. the variance baseline for more than two classes).
class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A metric was requested over an empty population.
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed score/trial/artifact file. Row and column are 1-based; 0 means
// "not applicable".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row = 0,
             std::size_t column = 0)
      : std::runtime_error(format(what, row, column)), row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& what, std::size_t row,
                            std::size_t column) {
    std::string out = what;
    if (row != 0) out += " (row " + std::to_string(row);
    if (column != 0) out += (row != 0 ? ", column " : " (column ") +
                            std::to_string(column);
    if (row != 0 || column != 0) out += ")";
    return out;
  }

  std::size_t row_;
  std::size_t column_;
};

// Artifacts that do not fit together (calibrator dims vs score file, etc).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer blew up. Carries the per-epoch loss trace up to the failure.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}

  const std::vector<double>& loss_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace ratiocal
