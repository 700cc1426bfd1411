#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wastescan {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  UnsupportedImage,
  MalformedWorldFile,
  UnsupportedRotation,
  WindowOutOfBounds,
  ContextTooSmall,
  AOISmallerThanTile,
  CropLargerThanTile,
  ImageTooSmall,
  BackendError,
  InvalidActivations,
  SizeMismatch,
  NotACandidate,
  SamplingExhausted,
  LocationOutsideCoverage,
  SplitInfeasible,
  EmptyManifest,
  Infeasible,
  LoadError,
  NotFound,
  ValidationError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

}  // namespace wastescan
