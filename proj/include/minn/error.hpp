#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace minn {

enum class ErrorCode {
  InvalidStep,
  EmptyMesh,
  DegenerateElement,
  ParseError,
  InvariantViolation,
  EmptyPattern,
  InvalidDim,
  DimMismatch,
  SpecError,
  ZeroTarget,
  NonFiniteLoss,
  EigFailure,
  EmptyBoundary,
  NewtonDiverged,
  TooFewPoints,
  SingularSystem,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace minn
