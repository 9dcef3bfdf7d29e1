#include "casegpt/error.hpp"

namespace casegpt {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "malformed_record";
    case ErrorCode::kMissingField: return "missing_field";
    case ErrorCode::kInvalidCode: return "invalid_code";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kStorageFailure: return "storage_failure";
    case ErrorCode::kEmptyText: return "empty_text";
    case ErrorCode::kZeroVector: return "zero_vector";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kNotNormalized: return "not_normalized";
    case ErrorCode::kBackendUnavailable: return "backend_unavailable";
    case ErrorCode::kInvalidParams: return "invalid_params";
    case ErrorCode::kEmptyIndex: return "empty_index";
    case ErrorCode::kIoFailure: return "io_failure";
    case ErrorCode::kCorruptSnapshot: return "corrupt_snapshot";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kMissingMetadata: return "missing_metadata";
    case ErrorCode::kEncoderFailure: return "encoder_failure";
    case ErrorCode::kNoCases: return "no_cases";
    case ErrorCode::kBudgetTooSmall: return "budget_too_small";
    case ErrorCode::kUnknownTemplate: return "unknown_template";
    case ErrorCode::kEmptyJudgment: return "empty_judgment";
    case ErrorCode::kEmptyQuerySet: return "empty_query_set";
    case ErrorCode::kInsufficientCorpus: return "insufficient_corpus";
    case ErrorCode::kConfigError: return "config_error";
  }
  return "unknown";
}

}  // namespace casegpt
