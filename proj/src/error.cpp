#include "corrosion/error.hpp"

namespace corrosion {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOddSpatialSize: return "odd_spatial_size";
    case ErrorCode::kLabelOutOfRange: return "label_out_of_range";
    case ErrorCode::kNonScalarLoss: return "non_scalar_loss";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnknownVersion: return "unknown_version";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kWeightShapeMismatch: return "weight_shape_mismatch";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kDecode: return "undecodable_image";
    case ErrorCode::kUnknownImage: return "unknown_image";
    case ErrorCode::kNotQuizEligible: return "not_quiz_eligible";
    case ErrorCode::kMissingExpertLabel: return "missing_expert_label";
    case ErrorCode::kPoolTooSmall: return "pool_too_small";
    case ErrorCode::kDuplicateBallot: return "duplicate_ballot";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kNonFiniteLoss: return "non_finite_loss";
    case ErrorCode::kAccuracyOutOfRange: return "accuracy_out_of_range";
    case ErrorCode::kMalformedRequest: return "malformed_request";
    case ErrorCode::kPayloadTooLarge: return "payload_too_large";
    case ErrorCode::kNotUploaded: return "not_uploaded";
  }
  return "unknown";
}

}  // namespace corrosion
