#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unirig {

enum class ErrorCode {
  MalformedAsset,
  ValidationFailure,
  UnitMissing,
  IoFailure,
  MalformedMotion,
  JointCountMismatch,
  EmptyMesh,
  DegenerateTriangle,
  SizeMismatch,
  EmptySupport,
  SingularSystem,
  InsufficientPoints,
  DegenerateCovariance,
  EncodingMismatch,
  ShapeMismatch,
  EmptySelection,
  MissingInit,
  Diverged,
  UnknownTopology,
  InvalidConfig,
  OutOfRange,
  TooFewFrames,
};

std::string_view to_string(ErrorCode code);

// True for failures caused by numerics rather than by malformed inputs.
bool is_numeric_failure(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept {
    return code_;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

// The message is only turned into a std::string on failure.
template <typename Message>
inline void check(bool condition, ErrorCode code, const Message& message) {
  if (!condition) [[unlikely]] {
    fail(code, std::string(message));
  }
}

} // namespace unirig
