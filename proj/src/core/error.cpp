#include "cvd/core/error.hpp"

namespace cvd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kConstraint: return "constraint violation";
    case ErrorCode::kSchema: return "schema error";
    case ErrorCode::kCorruption: return "store corruption";
    case ErrorCode::kMissingVersion: return "missing version";
    case ErrorCode::kStagingConflict: return "staging conflict";
    case ErrorCode::kOrphanTable: return "orphan table";
    case ErrorCode::kParameter: return "invalid parameter";
    case ErrorCode::kInfeasibleBudget: return "infeasible storage budget";
    case ErrorCode::kInvariantViolation: return "invariant violation";
    case ErrorCode::kScale: return "instance too large";
    case ErrorCode::kConsistency: return "consistency error";
    case ErrorCode::kEmptyScope: return "empty scope";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kLocked: return "store locked";
  }
  return "unknown error";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace cvd
