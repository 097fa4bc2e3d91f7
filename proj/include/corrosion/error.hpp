#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace corrosion {

// Stable machine-readable error codes. The service layer maps these onto
// HTTP statuses and echoes the string form in the `code` field.
enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kOddSpatialSize,
  kLabelOutOfRange,
  kNonScalarLoss,
  kInvalidConfig,
  kBadMagic,
  kUnknownVersion,
  kChecksumMismatch,
  kTruncated,
  kWeightShapeMismatch,
  kIo,
  kDecode,
  kUnknownImage,
  kNotQuizEligible,
  kMissingExpertLabel,
  kPoolTooSmall,
  kDuplicateBallot,
  kEmptyDataset,
  kNonFiniteLoss,
  kAccuracyOutOfRange,
  kMalformedRequest,
  kPayloadTooLarge,
  kNotUploaded,
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

}  // namespace corrosion
