#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace l3ens {

enum class ErrorCode {
  BadMagic,
  VersionMismatch,
  DigestMismatch,
  ManifestMismatch,
  NonFiniteValue,
  DimZero,
  Truncated,
  DuplicateId,
  IoFailure,
  MissingEmbedding,
  DimMismatch,
  EmptyBatch,
  NonFiniteLoss,
  InvalidArgument,
  InvalidDataset,
  SharedHeadShapeMismatch,
  MetricKindMismatch,
  ShapeMismatch,
  EmptyMemberList,
  OrphanEntity,
  UnknownEntity,
  ParseError,
  UnresolvedReference,
  UnknownKey,
  MissingField,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DimZero: return "DimZero";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::SharedHeadShapeMismatch: return "SharedHeadShapeMismatch";
    case ErrorCode::MetricKindMismatch: return "MetricKindMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMemberList: return "EmptyMemberList";
    case ErrorCode::OrphanEntity: return "OrphanEntity";
    case ErrorCode::UnknownEntity: return "UnknownEntity";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnresolvedReference: return "UnresolvedReference";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::MissingField: return "MissingField";
  }
  return "Unknown";
}

// Every failure in the engine surfaces as an Error carrying a code; the
// message names the file, key path, row or byte offset involved.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace l3ens
