#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bdcfm {

enum class ErrorCode {
  NotPositiveDefinite,
  InvalidParameter,
  ConvergenceFailure,
  SingularTopBlock,
  SingularGram,
  EmptyCluster,
  InsufficientDraws,
  DimensionMismatch,
  IncompletePanel,
  NonFiniteValue,
  DuplicateCell,
  MissingChains,
  InvalidConfig,
  IoError,
  ParseError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::SingularTopBlock: return "SingularTopBlock";
    case ErrorCode::SingularGram: return "SingularGram";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::InsufficientDraws: return "InsufficientDraws";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IncompletePanel: return "IncompletePanel";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::MissingChains: return "MissingChains";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace bdcfm
