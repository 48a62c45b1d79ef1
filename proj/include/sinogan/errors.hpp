#pragma once

#include <stdexcept>
#include <string>

namespace sinogan {

// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values or ranges.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an operation precondition (non-scalar loss, NaN input, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Metric is undefined for the given inputs (e.g. MAPE against an all-zero reference).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or unreadable file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sinogan
