#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lmar/io.hpp"
#include "lmar/provider.hpp"

namespace lmar::llm {

struct ChatRequest {
  std::string model;
  std::string system_prompt;
  std::string user_content;
  double temperature = 0.0;
  int max_output_tokens = 2048;
};

struct ChatResponse {
  std::string content;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

struct StageUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t calls = 0;
};

/// API token accounting. Totals always equal the sum over per_stage.
struct TokenLedger {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t document_tokens = 0;
  std::map<std::string, StageUsage> per_stage;

  void add(const std::string& stage, std::int64_t input, std::int64_t output);
  /// Replaces one stage's usage (used when a stage is re-run).
  void set_stage(const std::string& stage, const StageUsage& usage);
  bool consistent() const;

  Json to_json() const;
  static TokenLedger from_json(const Json& j);
};

/// (input + output) / document tokens. Throws ZeroDocumentTokens.
double compute_tcdt(const TokenLedger& ledger);
double compute_tcdt(std::int64_t input_tokens, std::int64_t output_tokens, std::int64_t document_tokens);

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
  /// Upper bound on concurrent send() calls this provider tolerates.
  virtual std::size_t max_parallel() const { return 1; }
};

/// Chat-completions over HTTP: POST {base_url}/chat/completions.
class RemoteChatProvider final : public ChatProvider {
 public:
  explicit RemoteChatProvider(ProviderConfig config);
  ChatResponse send(const ChatRequest& request) override;
  std::size_t max_parallel() const override { return config_.max_parallel; }

 private:
  ProviderConfig config_;
};

struct ScriptEntry {
  std::optional<std::string> match;
  std::string content;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

/// Replays scripted responses. Each call consumes the first unused entry
/// whose `match` (if any) occurs in system_prompt + "\n" + user_content.
/// Strictly sequential.
class ScriptedChatProvider final : public ChatProvider {
 public:
  explicit ScriptedChatProvider(std::vector<ScriptEntry> entries);
  static std::unique_ptr<ScriptedChatProvider> from_file(const std::filesystem::path& path);

  ChatResponse send(const ChatRequest& request) override;
  std::size_t consumed() const noexcept { return consumed_count_; }
  std::size_t remaining() const noexcept { return entries_.size() - consumed_count_; }

 private:
  std::vector<ScriptEntry> entries_;
  std::vector<char> used_;
  std::size_t consumed_count_ = 0;
  std::size_t first_unused_ = 0;
};

/// Test double that computes each response from the request.
class CallbackChatProvider final : public ChatProvider {
 public:
  using Fn = std::function<ChatResponse(const ChatRequest&)>;
  explicit CallbackChatProvider(Fn fn) : fn_(std::move(fn)) {}
  ChatResponse send(const ChatRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

std::unique_ptr<ChatProvider> make_chat_provider(const ProviderConfig& config);

/// Single choke point for LLM traffic. Ledger updates are serialized, so
/// concurrent completions never lose usage.
class Gateway {
 public:
  explicit Gateway(std::unique_ptr<ChatProvider> provider, std::optional<std::int64_t> token_budget = std::nullopt);

  ChatResponse complete(const std::string& stage, const ChatRequest& request);

  TokenLedger ledger() const;
  void reset_stage(const std::string& stage);
  void restore(const TokenLedger& ledger);
  void set_document_tokens(std::int64_t n);

  std::size_t max_parallel() const { return provider_->max_parallel(); }

  /// Runs fn(i) for i in [0, n) with at most max_parallel() in flight.
  /// Results must be written to per-index slots by the caller.
  void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) const;

 private:
  std::unique_ptr<ChatProvider> provider_;
  std::optional<std::int64_t> budget_;
  mutable std::mutex mu_;
  TokenLedger ledger_;
};

}  // namespace lmar::llm
