#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kerrcomb {

enum class ErrorCode {
  InvalidArgument,
  Diverged,
  NoComb,
  ClosureFail,
  Degenerate,
  NotSteady,
  FitIllConditioned,
  Unidentifiable,
  ZeroOccupation,
  Config,
  MissingArtifact,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::Diverged: return "DIVERGED";
    case ErrorCode::NoComb: return "NO_COMB";
    case ErrorCode::ClosureFail: return "CLOSURE_FAIL";
    case ErrorCode::Degenerate: return "DEGENERATE";
    case ErrorCode::NotSteady: return "NOT_STEADY";
    case ErrorCode::FitIllConditioned: return "FIT_ILL_CONDITIONED";
    case ErrorCode::Unidentifiable: return "UNIDENTIFIABLE";
    case ErrorCode::ZeroOccupation: return "ZERO_OCCUPATION";
    case ErrorCode::Config: return "CONFIG";
    case ErrorCode::MissingArtifact: return "MISSING_ARTIFACT";
  }
  return "UNKNOWN";
}

/// Exception carrying a machine-readable code; the CLI serializes both fields.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kerrcomb
