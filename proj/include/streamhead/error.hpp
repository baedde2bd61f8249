#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace streamhead {

enum class ErrorKind {
  InvalidInput,
  Range,
  Shape,
  Config,
  State,
  Length,
  DegenerateGeometry,
  NoOutput,
  Format,
  Protocol,
  NumericalFailure,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Range: return "range";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Config: return "config";
    case ErrorKind::State: return "state";
    case ErrorKind::Length: return "length";
    case ErrorKind::DegenerateGeometry: return "degenerate_geometry";
    case ErrorKind::NoOutput: return "no_output";
    case ErrorKind::Format: return "format";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

/// Every failure raised by the engine carries a kind so callers (and the
/// wire protocol) can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace streamhead
