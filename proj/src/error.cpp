#include "lmar/error.hpp"

namespace lmar {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DuplicateDocId: return "DuplicateDocId";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::ZeroDocumentTokens: return "ZeroDocumentTokens";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::TooFewQuestions: return "TooFewQuestions";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::NoQueries: return "NoQueries";
    case ErrorCode::EmptyRetrieval: return "EmptyRetrieval";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace lmar
