#pragma once

#include <cstddef>
#include <string>

#include "lmar/io.hpp"

namespace lmar {

enum class ProviderKind { Remote, Stub, Mock };

/// Backend connection settings shared by the embedding and LLM gateways.
struct ProviderConfig {
  ProviderKind kind = ProviderKind::Stub;
  std::string base_url;
  std::string model_name;
  std::size_t batch_size = 32;
  int timeout_ms = 60000;
  int max_retries = 3;
  /// First retry delay; doubles per attempt (1s, 2s, 4s by default).
  int backoff_ms = 1000;
  std::size_t max_parallel = 4;
  /// Stub embedding width.
  std::size_t dim = 256;
  /// Environment variable holding the bearer token (remote only).
  std::string api_key_env;
  /// Mock LLM script path (mock only).
  std::string script_path;

  void validate() const;
  std::string fingerprint() const;
};

std::string to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(const std::string& s);

/// POSTs JSON to base_url + path. Retries connection failures, timeouts and
/// 5xx responses up to max_retries times with exponential backoff; any other
/// non-2xx status fails immediately. Throws ProviderUnavailable.
Json post_json_with_retry(const ProviderConfig& config, const std::string& path, const Json& body);

}  // namespace lmar
