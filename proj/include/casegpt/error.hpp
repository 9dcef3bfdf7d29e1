#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace casegpt {

// One code per error class. CLI exit codes and HTTP statuses are derived
// from these, so values are stable.
enum class ErrorCode {
  kMalformedRecord = 1,
  kMissingField,
  kInvalidCode,
  kDuplicateId,
  kNotFound,
  kStorageFailure,
  kEmptyText,
  kZeroVector,
  kDimensionMismatch,
  kNotNormalized,
  kBackendUnavailable,
  kInvalidParams,
  kEmptyIndex,
  kIoFailure,
  kCorruptSnapshot,
  kVersionMismatch,
  kMissingMetadata,
  kEncoderFailure,
  kNoCases,
  kBudgetTooSmall,
  kUnknownTemplate,
  kEmptyJudgment,
  kEmptyQuerySet,
  kInsufficientCorpus,
  kConfigError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace casegpt
