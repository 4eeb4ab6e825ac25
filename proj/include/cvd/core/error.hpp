#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvd {

enum class ErrorCode {
  kNotFound,
  kParse,
  kConstraint,
  kSchema,
  kCorruption,
  kMissingVersion,
  kStagingConflict,
  kOrphanTable,
  kParameter,
  kInfeasibleBudget,
  kInvariantViolation,
  kScale,
  kConsistency,
  kEmptyScope,
  kIo,
  kLocked,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for failures that indicate damaged on-disk state rather than bad input.
  bool is_corruption() const noexcept {
    return code_ == ErrorCode::kCorruption || code_ == ErrorCode::kIo;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace cvd
