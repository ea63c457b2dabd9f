#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace x2d3d {

enum class ErrorCode {
  kTooFewPoints,
  kTooFewPointsRemaining,
  kImageTooSmall,
  kNonFiniteActivation,
  kNonFiniteGradient,
  kShapeMismatch,
  kDatasetTooSmall,
  kEmptyInput,
  kDimensionMismatch,
  kDegenerateConfiguration,
  kBehindCamera,
  kConfigInvalid,
  kEmptyDatabase,
  kMissingGroundTruth,
  kEmptyTestSet,
  kIo,
  kFormat,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kTooFewPointsRemaining: return "TooFewPointsRemaining";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kNonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kEmptyDatabase: return "EmptyDatabase";
    case ErrorCode::kMissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::kEmptyTestSet: return "EmptyTestSet";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kFormat: return "Format";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace x2d3d
