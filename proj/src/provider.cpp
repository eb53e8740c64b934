#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "lmar/provider.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "lmar/error.hpp"

namespace lmar {

std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::Remote: return "remote";
    case ProviderKind::Stub: return "stub";
    case ProviderKind::Mock: return "mock";
  }
  return "unknown";
}

ProviderKind provider_kind_from_string(const std::string& s) {
  if (s == "remote") return ProviderKind::Remote;
  if (s == "stub") return ProviderKind::Stub;
  if (s == "mock") return ProviderKind::Mock;
  throw Error(ErrorCode::ConfigError, "unknown provider kind '" + s + "'");
}

void ProviderConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
  if (max_parallel < 1) throw Error(ErrorCode::ConfigError, "max_parallel must be >= 1");
  if (kind == ProviderKind::Remote && base_url.empty())
    throw Error(ErrorCode::ConfigError, "remote provider needs base_url");
  if (kind == ProviderKind::Stub && dim < 1) throw Error(ErrorCode::ConfigError, "stub dim must be >= 1");
}

std::string ProviderConfig::fingerprint() const {
  switch (kind) {
    case ProviderKind::Stub: return "stub:trigram-hash-v1:d=" + std::to_string(dim);
    case ProviderKind::Mock: return "mock";
    case ProviderKind::Remote: return "remote:" + model_name + "@" + base_url;
  }
  return "unknown";
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto slash = url.find('/', host_start);
  SplitUrl out;
  out.origin = slash == std::string::npos ? url : url.substr(0, slash);
  out.prefix = slash == std::string::npos ? "" : url.substr(slash);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

}  // namespace

Json post_json_with_retry(const ProviderConfig& config, const std::string& path, const Json& body) {
  auto url = split_url(config.base_url);
  httplib::Client client(url.origin);
  auto timeout = std::chrono::milliseconds(config.timeout_ms);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                static_cast<long>((config.timeout_ms % 1000) * 1000));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                          static_cast<long>((config.timeout_ms % 1000) * 1000));
  httplib::Headers headers;
  if (!config.api_key_env.empty())
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(config.backoff_ms) << (attempt - 1)));
    auto res = client.Post(url.prefix + path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::ProviderUnavailable,
                  config.base_url + path + " returned HTTP " + std::to_string(res->status));
    Json parsed = Json::parse(res->body, nullptr, false);
    if (parsed.is_discarded())
      throw Error(ErrorCode::ProviderUnavailable, config.base_url + path + " returned non-JSON body");
    return parsed;
  }
  throw Error(ErrorCode::ProviderUnavailable, config.base_url + path + " failed after " +
                                                  std::to_string(config.max_retries + 1) + " attempts (" +
                                                  last_error + ")");
}

}  // namespace lmar
