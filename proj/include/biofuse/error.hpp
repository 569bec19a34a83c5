#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biofuse {

enum class ErrorCode {
  InvalidArgument,
  Io,
  SamplingUndefined,
  InvalidDevice,
  InvalidKeycode,
  EmptySequence,
  DimensionMismatch,
  MissingCache,
  CorruptFile,
  VersionMismatch,
  InsufficientSubjects,
  EmptyTemplate,
  EmptyScores,
  ZeroBaseline,
  TrainingDiverged,
  NonFinite,
  InvalidConfig,
  MissingInput,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::SamplingUndefined: return "SamplingUndefined";
    case ErrorCode::InvalidDevice: return "InvalidDevice";
    case ErrorCode::InvalidKeycode: return "InvalidKeycode";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingCache: return "MissingCache";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::InsufficientSubjects: return "InsufficientSubjects";
    case ErrorCode::EmptyTemplate: return "EmptyTemplate";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingInput: return "MissingInput";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace biofuse
