#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmar {

enum class ErrorCode {
  IoError,
  EmptyDocument,
  EmptyCorpus,
  DuplicateDocId,
  MalformedRecord,
  ProviderUnavailable,
  DimMismatch,
  ZeroVector,
  EmptyIndex,
  ScriptExhausted,
  BudgetExceeded,
  ParseFailure,
  ZeroDocumentTokens,
  CorpusTooSmall,
  TooFewQuestions,
  EmptyDataset,
  DivergenceDetected,
  NoQueries,
  EmptyRetrieval,
  MissingArtifact,
  ConfigError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lmar
