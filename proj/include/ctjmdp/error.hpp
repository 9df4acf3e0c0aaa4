#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctjmdp {

enum class ErrorCode {
  RowSum,
  NegRate,
  EmptyActions,
  UnknownId,
  BadSupport,
  BadDist,
  UnsupportedAction,
  GridMismatch,
  ZeroExit,
  StepTooCoarse,
  UndefinedValue,
  AssumptionViolation,
  ActionDependentJumpCost,
  IncompletePolicy,
  Parse,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::RowSum: return "ROW_SUM";
    case ErrorCode::NegRate: return "NEG_RATE";
    case ErrorCode::EmptyActions: return "EMPTY_ACTIONS";
    case ErrorCode::UnknownId: return "UNKNOWN_ID";
    case ErrorCode::BadSupport: return "BAD_SUPPORT";
    case ErrorCode::BadDist: return "BAD_DIST";
    case ErrorCode::UnsupportedAction: return "UNSUPPORTED_ACTION";
    case ErrorCode::GridMismatch: return "GRID_MISMATCH";
    case ErrorCode::ZeroExit: return "ZERO_EXIT";
    case ErrorCode::StepTooCoarse: return "STEP_TOO_COARSE";
    case ErrorCode::UndefinedValue: return "UNDEFINED_VALUE";
    case ErrorCode::AssumptionViolation: return "ASSUMPTION_VIOLATION";
    case ErrorCode::ActionDependentJumpCost: return "ACTION_DEPENDENT_JUMP_COST";
    case ErrorCode::IncompletePolicy: return "INCOMPLETE_POLICY";
    case ErrorCode::Parse: return "PARSE";
  }
  return "UNKNOWN";
}

/// Exception carrying a machine-readable code. Every failure the library
/// reports goes through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ctjmdp
