#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semcache {

enum class ErrorCode {
  EmptyQuery,
  EmptyResponse,
  ProviderFailure,
  DimensionMismatch,
  ZeroVector,
  EmptyBatch,
  BatchTooSmall,
  InsufficientData,
  TooFewSamples,
  KTooLarge,
  DegenerateData,
  UnknownEntry,
  IoFailure,
  CorruptFile,
  VersionUnsupported,
  EmptyInput,
  InsufficientLabels,
  EmptyUpdates,
  LengthMismatch,
  EmptyCounts,
  EmptyBase,
  InvalidArgument,
  UpstreamUnreachable,
  UpstreamBadStatus,
  ParseError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::UnknownEntry: return "UnknownEntry";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InsufficientLabels: return "InsufficientLabels";
    case ErrorCode::EmptyUpdates: return "EmptyUpdates";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyCounts: return "EmptyCounts";
    case ErrorCode::EmptyBase: return "EmptyBase";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UpstreamUnreachable: return "UpstreamUnreachable";
    case ErrorCode::UpstreamBadStatus: return "UpstreamBadStatus";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` is the
/// stable, machine-checkable part, `what()` carries detail for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Upstream HTTP failure with the offending status attached.
class UpstreamStatusError : public Error {
 public:
  UpstreamStatusError(int status, const std::string& detail)
      : Error(ErrorCode::UpstreamBadStatus, "status " + std::to_string(status) + ": " + detail),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace semcache
