#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pgd {

// Every failure raised by the library carries one of these kinds. The kind
// name is the machine-readable code printed by the CLI.
enum class ErrorKind {
  config,
  budget,
  domain,
  stepsize,
  control_batch_empty,
  moment,
  data,
  format,
  label,
  insufficient_data,
  dimension,
  singular_system,
  zero_norm,
  stale_cache,
  degenerate_stats,
};

inline std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::budget: return "BudgetError";
    case ErrorKind::domain: return "DomainError";
    case ErrorKind::stepsize: return "StepsizeError";
    case ErrorKind::control_batch_empty: return "ControlBatchEmpty";
    case ErrorKind::moment: return "MomentError";
    case ErrorKind::data: return "DataError";
    case ErrorKind::format: return "FormatError";
    case ErrorKind::label: return "LabelError";
    case ErrorKind::insufficient_data: return "InsufficientData";
    case ErrorKind::dimension: return "DimensionError";
    case ErrorKind::singular_system: return "SingularSystem";
    case ErrorKind::zero_norm: return "ZeroNorm";
    case ErrorKind::stale_cache: return "StaleCache";
    case ErrorKind::degenerate_stats: return "DegenerateStats";
  }
  return "Error";
}

/// Process exit status for a failure of the given kind:
/// 2 configuration, 3 data, 4 numeric.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::budget:
    case ErrorKind::domain:
    case ErrorKind::stepsize:
    case ErrorKind::control_batch_empty:
    case ErrorKind::moment:
      return 2;
    case ErrorKind::data:
    case ErrorKind::format:
    case ErrorKind::label:
    case ErrorKind::insufficient_data:
      return 3;
    default:
      return 4;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace pgd
