#pragma once

#include <stdexcept>
#include <string>

namespace kpcast {

enum class ErrorKind {
  Parse,
  Schema,
  Validation,
  Config,
  Dimension,
  Domain,
  EmptyInput,
  Unfillable,
  Merge,
  WindowUnderflow,
  Rank,
  Leakage,
  Io,
  Network,
  Comparison,
  Usage,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::Unfillable: return "unfillable-column";
    case ErrorKind::Merge: return "merge";
    case ErrorKind::WindowUnderflow: return "window-underflow";
    case ErrorKind::Rank: return "rank";
    case ErrorKind::Leakage: return "leakage";
    case ErrorKind::Io: return "io";
    case ErrorKind::Network: return "network";
    case ErrorKind::Comparison: return "comparison";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace kpcast
