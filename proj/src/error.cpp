#include "wastescan/error.hpp"

namespace wastescan {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedImage: return "UnsupportedImage";
    case ErrorCode::MalformedWorldFile: return "MalformedWorldFile";
    case ErrorCode::UnsupportedRotation: return "UnsupportedRotation";
    case ErrorCode::WindowOutOfBounds: return "WindowOutOfBounds";
    case ErrorCode::ContextTooSmall: return "ContextTooSmall";
    case ErrorCode::AOISmallerThanTile: return "AOISmallerThanTile";
    case ErrorCode::CropLargerThanTile: return "CropLargerThanTile";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::InvalidActivations: return "InvalidActivations";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::NotACandidate: return "NotACandidate";
    case ErrorCode::SamplingExhausted: return "SamplingExhausted";
    case ErrorCode::LocationOutsideCoverage: return "LocationOutsideCoverage";
    case ErrorCode::SplitInfeasible: return "SplitInfeasible";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::LoadError: return "LoadError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

}  // namespace wastescan
