#include "minn/error.hpp"

namespace minn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidStep: return "InvalidStep";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::DegenerateElement: return "DegenerateElement";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyPattern: return "EmptyPattern";
    case ErrorCode::InvalidDim: return "InvalidDim";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SpecError: return "SpecError";
    case ErrorCode::ZeroTarget: return "ZeroTarget";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EigFailure: return "EigFailure";
    case ErrorCode::EmptyBoundary: return "EmptyBoundary";
    case ErrorCode::NewtonDiverged: return "NewtonDiverged";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace minn
