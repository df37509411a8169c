#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cusum {

enum class ErrorCode {
  InvalidModel,
  InvalidArgument,
  InvalidAlpha,
  NoPositiveRoot,
  OutOfDomain,
  DivergentMoment,
  NotAnLLRModel,
  NotSupportedModel,
  DegenerateModel,
  TooLarge,
  NoConvergence,
  UnstableQueue,
  InsufficientReps,
  StateBudgetExceeded,
  HorizonExceeded,
  UnsupportedValue,
  ParseError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidAlpha: return "InvalidAlpha";
    case ErrorCode::NoPositiveRoot: return "NoPositiveRoot";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::DivergentMoment: return "DivergentMoment";
    case ErrorCode::NotAnLLRModel: return "NotAnLLRModel";
    case ErrorCode::NotSupportedModel: return "NotSupportedModel";
    case ErrorCode::DegenerateModel: return "DegenerateModel";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::UnstableQueue: return "UnstableQueue";
    case ErrorCode::InsufficientReps: return "InsufficientReps";
    case ErrorCode::StateBudgetExceeded: return "StateBudgetExceeded";
    case ErrorCode::HorizonExceeded: return "HorizonExceeded";
    case ErrorCode::UnsupportedValue: return "UnsupportedValue";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can report a stable error name.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& context)
      : std::runtime_error(std::string(error_name(code)) + ": " + context),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace cusum
