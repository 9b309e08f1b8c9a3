#include "unirig/error.hpp"

namespace unirig {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedAsset:
      return "MalformedAsset";
    case ErrorCode::ValidationFailure:
      return "ValidationFailure";
    case ErrorCode::UnitMissing:
      return "UnitMissing";
    case ErrorCode::IoFailure:
      return "IoFailure";
    case ErrorCode::MalformedMotion:
      return "MalformedMotion";
    case ErrorCode::JointCountMismatch:
      return "JointCountMismatch";
    case ErrorCode::EmptyMesh:
      return "EmptyMesh";
    case ErrorCode::DegenerateTriangle:
      return "DegenerateTriangle";
    case ErrorCode::SizeMismatch:
      return "SizeMismatch";
    case ErrorCode::EmptySupport:
      return "EmptySupport";
    case ErrorCode::SingularSystem:
      return "SingularSystem";
    case ErrorCode::InsufficientPoints:
      return "InsufficientPoints";
    case ErrorCode::DegenerateCovariance:
      return "DegenerateCovariance";
    case ErrorCode::EncodingMismatch:
      return "EncodingMismatch";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::EmptySelection:
      return "EmptySelection";
    case ErrorCode::MissingInit:
      return "MissingInit";
    case ErrorCode::Diverged:
      return "Diverged";
    case ErrorCode::UnknownTopology:
      return "UnknownTopology";
    case ErrorCode::InvalidConfig:
      return "InvalidConfig";
    case ErrorCode::OutOfRange:
      return "OutOfRange";
    case ErrorCode::TooFewFrames:
      return "TooFewFrames";
  }
  return "Unknown";
}

bool is_numeric_failure(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateTriangle:
    case ErrorCode::SingularSystem:
    case ErrorCode::DegenerateCovariance:
    case ErrorCode::Diverged:
    case ErrorCode::EmptySupport:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

} // namespace unirig
