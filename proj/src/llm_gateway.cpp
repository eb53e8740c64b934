#include "lmar/llm_gateway.hpp"

#include <atomic>
#include <thread>

#include "lmar/error.hpp"

namespace lmar::llm {

void TokenLedger::add(const std::string& stage, std::int64_t input, std::int64_t output) {
  auto& s = per_stage[stage];
  s.input_tokens += input;
  s.output_tokens += output;
  s.calls += 1;
  input_tokens += input;
  output_tokens += output;
}

void TokenLedger::set_stage(const std::string& stage, const StageUsage& usage) {
  if (auto it = per_stage.find(stage); it != per_stage.end()) {
    input_tokens -= it->second.input_tokens;
    output_tokens -= it->second.output_tokens;
  }
  per_stage[stage] = usage;
  input_tokens += usage.input_tokens;
  output_tokens += usage.output_tokens;
}

bool TokenLedger::consistent() const {
  std::int64_t in = 0, out = 0;
  for (const auto& [_, s] : per_stage) {
    in += s.input_tokens;
    out += s.output_tokens;
  }
  return in == input_tokens && out == output_tokens;
}

Json TokenLedger::to_json() const {
  Json j;
  j["input_tokens"] = input_tokens;
  j["output_tokens"] = output_tokens;
  j["total_tokens"] = input_tokens + output_tokens;
  j["document_tokens"] = document_tokens;
  Json stages = Json::object();
  for (const auto& [name, s] : per_stage)
    stages[name] = {{"input_tokens", s.input_tokens}, {"output_tokens", s.output_tokens}, {"calls", s.calls}};
  j["per_stage"] = std::move(stages);
  j["tcdt"] = document_tokens > 0 ? Json(compute_tcdt(*this)) : Json(nullptr);
  return j;
}

TokenLedger TokenLedger::from_json(const Json& j) {
  TokenLedger l;
  l.document_tokens = j.value("document_tokens", std::int64_t{0});
  if (j.contains("per_stage"))
    for (const auto& [name, s] : j["per_stage"].items())
      l.set_stage(name, {s.value("input_tokens", std::int64_t{0}), s.value("output_tokens", std::int64_t{0}),
                         s.value("calls", std::int64_t{0})});
  // Stored totals win so that consistent() can catch a file that disagrees with itself.
  l.input_tokens = j.value("input_tokens", l.input_tokens);
  l.output_tokens = j.value("output_tokens", l.output_tokens);
  return l;
}

double compute_tcdt(std::int64_t input_tokens, std::int64_t output_tokens, std::int64_t document_tokens) {
  if (document_tokens <= 0) throw Error(ErrorCode::ZeroDocumentTokens, "TCDT needs a positive document token count");
  return static_cast<double>(input_tokens + output_tokens) / static_cast<double>(document_tokens);
}

double compute_tcdt(const TokenLedger& ledger) {
  return compute_tcdt(ledger.input_tokens, ledger.output_tokens, ledger.document_tokens);
}

RemoteChatProvider::RemoteChatProvider(ProviderConfig config) : config_(std::move(config)) {
  if (config_.api_key_env.empty()) config_.api_key_env = "LMAR_LLM_API_KEY";
  config_.validate();
}

ChatResponse RemoteChatProvider::send(const ChatRequest& request) {
  Json body;
  body["model"] = request.model.empty() ? config_.model_name : request.model;
  body["messages"] = Json::array({{{"role", "system"}, {"content", request.system_prompt}},
                                  {{"role", "user"}, {"content", request.user_content}}});
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_output_tokens;
  Json resp = post_json_with_retry(config_, "/chat/completions", body);
  try {
    ChatResponse out;
    out.content = resp.at("choices").at(0).at("message").at("content").get<std::string>();
    if (resp.contains("usage")) {
      out.input_tokens = resp["usage"].value("prompt_tokens", std::int64_t{0});
      out.output_tokens = resp["usage"].value("completion_tokens", std::int64_t{0});
    }
    return out;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, std::string("malformed chat response: ") + e.what());
  }
}

ScriptedChatProvider::ScriptedChatProvider(std::vector<ScriptEntry> entries)
    : entries_(std::move(entries)), used_(entries_.size(), 0) {}

std::unique_ptr<ScriptedChatProvider> ScriptedChatProvider::from_file(const std::filesystem::path& path) {
  std::vector<ScriptEntry> entries;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      ScriptEntry e;
      if (rec.contains("match") && rec["match"].is_string()) e.match = rec["match"].get<std::string>();
      e.content = rec.at("content").get<std::string>();
      e.input_tokens = rec.value("input_tokens", std::int64_t{0});
      e.output_tokens = rec.value("output_tokens", std::int64_t{0});
      entries.push_back(std::move(e));
    } catch (const Json::exception& ex) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + ex.what());
    }
  });
  return std::make_unique<ScriptedChatProvider>(std::move(entries));
}

ChatResponse ScriptedChatProvider::send(const ChatRequest& request) {
  const std::string haystack = request.system_prompt + "\n" + request.user_content;
  for (std::size_t i = first_unused_; i < entries_.size(); ++i) {
    if (used_[i]) continue;
    const auto& e = entries_[i];
    if (e.match && haystack.find(*e.match) == std::string::npos) continue;
    used_[i] = 1;
    ++consumed_count_;
    while (first_unused_ < entries_.size() && used_[first_unused_]) ++first_unused_;
    return {e.content, e.input_tokens, e.output_tokens};
  }
  throw Error(ErrorCode::ScriptExhausted, "no scripted response left for this request");
}

std::unique_ptr<ChatProvider> make_chat_provider(const ProviderConfig& config) {
  config.validate();
  switch (config.kind) {
    case ProviderKind::Remote: return std::make_unique<RemoteChatProvider>(config);
    case ProviderKind::Mock:
      if (config.script_path.empty()) throw Error(ErrorCode::ConfigError, "mock LLM provider needs a script path");
      return ScriptedChatProvider::from_file(config.script_path);
    case ProviderKind::Stub: break;
  }
  throw Error(ErrorCode::ConfigError, "LLM provider must be 'remote' or 'mock'");
}

Gateway::Gateway(std::unique_ptr<ChatProvider> provider, std::optional<std::int64_t> token_budget)
    : provider_(std::move(provider)), budget_(token_budget) {}

ChatResponse Gateway::complete(const std::string& stage, const ChatRequest& request) {
  if (request.system_prompt.empty() || request.user_content.empty())
    throw Error(ErrorCode::InvalidArgument, "chat request prompts must be non-empty");
  if (budget_) {
    std::lock_guard lock(mu_);
    if (ledger_.input_tokens + ledger_.output_tokens >= *budget_)
      throw Error(ErrorCode::BudgetExceeded, "token budget of " + std::to_string(*budget_) + " exhausted");
  }
  ChatResponse resp = provider_->send(request);
  if (resp.input_tokens < 0 || resp.output_tokens < 0)
    throw Error(ErrorCode::ProviderUnavailable, "provider reported negative token usage");
  std::lock_guard lock(mu_);
  ledger_.add(stage, resp.input_tokens, resp.output_tokens);
  return resp;
}

TokenLedger Gateway::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

void Gateway::reset_stage(const std::string& stage) {
  std::lock_guard lock(mu_);
  ledger_.set_stage(stage, {});
}

void Gateway::restore(const TokenLedger& ledger) {
  std::lock_guard lock(mu_);
  ledger_ = ledger;
}

void Gateway::set_document_tokens(std::int64_t n) {
  std::lock_guard lock(mu_);
  ledger_.document_tokens = n;
}

void Gateway::for_each(std::size_t n, const std::function<void(std::size_t)>& fn) const {
  std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(max_parallel(), 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
          next = n;
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace lmar::llm
