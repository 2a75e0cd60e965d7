#include "viewalign/errors.hpp"

namespace viewalign {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kInvalidDepth: return "InvalidDepth";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::kTooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kInsufficientSupport: return "InsufficientSupport";
    case ErrorCode::kNoSolution: return "NoSolution";
    case ErrorCode::kCameraUnavailable: return "CameraUnavailable";
    case ErrorCode::kInvalidFile: return "InvalidFile";
    case ErrorCode::kEmbedderFailure: return "EmbedderFailure";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyIndex: return "EmptyIndex";
    case ErrorCode::kRankerProtocolError: return "RankerProtocolError";
    case ErrorCode::kRankerUnavailable: return "RankerUnavailable";
  }
  return "Unknown";
}

}  // namespace viewalign
