#include "lmar/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <functional>

#include "lmar/error.hpp"
#include "lmar/rng.hpp"

namespace lmar::config {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ConfigError, "line " + std::to_string(line) + ": " + what);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view strip_comment(std::string_view s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

Json parse_scalar(std::string_view v, std::size_t line) {
  v = trim(v);
  if (v.empty()) fail(line, "missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') fail(line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        char c = v[++i];
        out.push_back(c == 'n' ? '\n' : c == 't' ? '\t' : c);
      } else {
        out.push_back(v[i]);
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string s(v);
  std::erase(s, '_');
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (s.find_first_of(".eE") == std::string::npos || s.find("inf") != std::string::npos) {
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(b, e, i);
    if (ec == std::errc() && p == e) return i;
  }
  double d = 0;
  auto [p, ec] = std::from_chars(b, e, d);
  if (ec == std::errc() && p == e) return d;
  fail(line, "cannot parse value '" + s + "'");
}

Json parse_value(std::string_view v, std::size_t line) {
  v = trim(v);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') fail(line, "unterminated array");
    Json arr = Json::array();
    std::string_view body = trim(v.substr(1, v.size() - 2));
    std::size_t start = 0;
    bool in_str = false;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i < body.size() && body[i] == '"') in_str = !in_str;
      if (i == body.size() || (body[i] == ',' && !in_str)) {
        auto item = trim(body.substr(start, i - start));
        if (!item.empty()) arr.push_back(parse_scalar(item, line));
        start = i + 1;
      }
    }
    return arr;
  }
  return parse_scalar(v, line);
}

}  // namespace

std::map<std::string, Json> parse_toml(const std::string& text) {
  std::map<std::string, Json> out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line = trim(strip_comment(std::string_view(text).substr(pos, nl - pos)));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail(line_no, "bad section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(line_no, "expected key = value");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail(line_no, "empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (out.contains(full)) fail(line_no, "duplicate key '" + full + "'");
    out[full] = parse_value(line.substr(eq + 1), line_no);
  }
  return out;
}

void PipelineConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  cluster.validate();
  train.validate();
  embedding.validate();
  llm.validate();
  if (embedding.kind == ProviderKind::Mock) bad("embedding.kind must be stub or remote");
  if (llm.kind == ProviderKind::Stub) bad("llm.kind must be mock or remote");
  if (llm.kind == ProviderKind::Mock && !llm.script_path.empty() && !std::filesystem::exists(llm.script_path))
    bad("mock script does not exist: " + llm.script_path);
  if (grid) {
    if (grid_k.empty() || grid_delta.empty()) bad("grid_k and grid_delta must be non-empty");
    for (auto k : grid_k)
      if (k < 1) bad("grid_k entries must be >= 1");
    for (auto d : grid_delta)
      if (!(d >= -1.0 && d < 1.0)) bad("grid_delta entries must lie in [-1, 1)");
    if (!(grid_sample_fraction > 0.0 && grid_sample_fraction <= 1.0)) bad("grid sample_fraction must lie in (0, 1]");
  }
  if (triplet_candidate_k == 1) bad("triplets.candidate_k must be >= 2");
  if (!(triplet_val_fraction > 0.0 && triplet_val_fraction < 1.0)) bad("triplets.val_fraction must lie in (0, 1)");
  if (!(qe_val_fraction > 0.0 && qe_val_fraction < 1.0)) bad("qe.val_fraction must lie in (0, 1)");
  if (max_question_num < 1) bad("qe.max_question_num must be >= 1");
  if (eval_k < 1) bad("eval.k must be >= 1");
  if (segmentation.max_tokens < 1) bad("segmentation.max_tokens must be >= 1");
  if (token_budget && *token_budget <= 0) bad("llm.token_budget must be > 0");
  if (!eval_queries.empty() && !std::filesystem::exists(eval_queries))
    bad("eval.queries does not exist: " + eval_queries.string());
  if (!corpus.empty() && !std::filesystem::exists(corpus)) bad("corpus does not exist: " + corpus.string());
}

namespace {

Json provider_json(const ProviderConfig& p) {
  Json j;
  j["kind"] = to_string(p.kind);
  j["fingerprint"] = p.fingerprint();
  if (p.kind == ProviderKind::Stub) j["dim"] = p.dim;
  if (p.kind == ProviderKind::Remote) {
    j["model"] = p.model_name;
    j["batch_size"] = p.batch_size;
  }
  return j;
}

}  // namespace

Json PipelineConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["segmentation"] = {{"max_tokens", segmentation.max_tokens}};
  j["embedding"] = provider_json(embedding);
  j["llm"] = provider_json(llm);
  j["llm"]["model"] = llm_model;
  j["cluster"] = {{"k", cluster.k}, {"delta", cluster.delta}, {"grid", grid}};
  if (grid) {
    j["cluster"]["grid_k"] = grid_k;
    j["cluster"]["grid_delta"] = grid_delta;
    j["cluster"]["sample_fraction"] = grid_sample_fraction;
  }
  j["triplets"] = {{"candidate_k", triplet_candidate_k}, {"count", triplet_count}, {"val_fraction", triplet_val_fraction}};
  j["qe"] = {{"max_question_num", max_question_num},
             {"negative_ratio", negative_ratio},
             {"val_fraction", qe_val_fraction}};
  j["train"] = train.to_json();
  j["eval"] = {{"k", eval_k}, {"custom_queries", !eval_queries.empty()}};
  return j;
}

std::string PipelineConfig::fingerprint() const { return sha256_hex(to_json().dump()); }

std::uint64_t PipelineConfig::stage_seed(std::string_view stage) const {
  // FNV-1a of the stage name as the salt.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(seed, h);
}

namespace {

using Setter = std::function<void(PipelineConfig&, const Json&, const std::filesystem::path&)>;

template <typename T>
T as(const Json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw std::runtime_error("not a number");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw std::runtime_error("not an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<std::int64_t>() < 0) throw std::runtime_error("must be non-negative");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::runtime_error("not a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::runtime_error("not a string");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ConfigError, "key '" + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void add_provider_keys(std::map<std::string, Setter>& s, const std::string& section, ProviderConfig PipelineConfig::*member) {
  s[section + ".kind"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).kind = provider_kind_from_string(as<std::string>(v, section + ".kind"));
  };
  s[section + ".base_url"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).base_url = as<std::string>(v, section + ".base_url");
  };
  s[section + ".model"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).model_name = as<std::string>(v, section + ".model");
  };
  s[section + ".batch_size"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).batch_size = as<std::size_t>(v, section + ".batch_size");
  };
  s[section + ".timeout_ms"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).timeout_ms = as<int>(v, section + ".timeout_ms");
  };
  s[section + ".max_retries"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).max_retries = as<int>(v, section + ".max_retries");
  };
  s[section + ".backoff_ms"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).backoff_ms = as<int>(v, section + ".backoff_ms");
  };
  s[section + ".max_parallel"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).max_parallel = as<std::size_t>(v, section + ".max_parallel");
  };
  s[section + ".dim"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).dim = as<std::size_t>(v, section + ".dim");
  };
  s[section + ".api_key_env"] = [=](PipelineConfig& c, const Json& v, auto&) {
    (c.*member).api_key_env = as<std::string>(v, section + ".api_key_env");
  };
  s[section + ".script"] = [=](PipelineConfig& c, const Json& v, const std::filesystem::path& base) {
    (c.*member).script_path = resolve(base, as<std::string>(v, section + ".script")).string();
  };
}

template <typename T>
Setter field(T PipelineConfig::*member, std::string key) {
  return [=](PipelineConfig& c, const Json& v, auto&) { c.*member = as<T>(v, key); };
}

template <typename T>
Setter train_field(T trainer::TrainConfig::*member, std::string key) {
  return [=](PipelineConfig& c, const Json& v, auto&) { c.train.*member = as<T>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> s;
    s["corpus"] = [](PipelineConfig& c, const Json& v, const std::filesystem::path& base) {
      c.corpus = resolve(base, as<std::string>(v, "corpus"));
    };
    s["out"] = [](PipelineConfig& c, const Json& v, const std::filesystem::path& base) {
      c.out_dir = resolve(base, as<std::string>(v, "out"));
    };
    s["seed"] = field(&PipelineConfig::seed, "seed");
    s["segmentation.max_tokens"] = [](PipelineConfig& c, const Json& v, auto&) {
      c.segmentation.max_tokens = as<std::size_t>(v, "segmentation.max_tokens");
    };
    add_provider_keys(s, "embedding", &PipelineConfig::embedding);
    add_provider_keys(s, "llm", &PipelineConfig::llm);
    s["llm.model"] = [](PipelineConfig& c, const Json& v, auto&) {
      c.llm_model = as<std::string>(v, "llm.model");
      c.llm.model_name = c.llm_model;
    };
    s["llm.token_budget"] = [](PipelineConfig& c, const Json& v, auto&) {
      c.token_budget = as<std::int64_t>(v, "llm.token_budget");
    };
    s["cluster.k"] = [](PipelineConfig& c, const Json& v, auto&) { c.cluster.k = as<std::size_t>(v, "cluster.k"); };
    s["cluster.delta"] = [](PipelineConfig& c, const Json& v, auto&) { c.cluster.delta = as<double>(v, "cluster.delta"); };
    s["cluster.grid"] = field(&PipelineConfig::grid, "cluster.grid");
    s["cluster.grid_k"] = field(&PipelineConfig::grid_k, "cluster.grid_k");
    s["cluster.grid_delta"] = field(&PipelineConfig::grid_delta, "cluster.grid_delta");
    s["cluster.sample_fraction"] = field(&PipelineConfig::grid_sample_fraction, "cluster.sample_fraction");
    s["triplets.candidate_k"] = field(&PipelineConfig::triplet_candidate_k, "triplets.candidate_k");
    s["triplets.count"] = field(&PipelineConfig::triplet_count, "triplets.count");
    s["triplets.val_fraction"] = field(&PipelineConfig::triplet_val_fraction, "triplets.val_fraction");
    s["qe.max_question_num"] = field(&PipelineConfig::max_question_num, "qe.max_question_num");
    s["qe.negative_ratio"] = field(&PipelineConfig::negative_ratio, "qe.negative_ratio");
    s["qe.val_fraction"] = field(&PipelineConfig::qe_val_fraction, "qe.val_fraction");
    s["train.triplet_lr"] = train_field(&trainer::TrainConfig::triplet_lr, "train.triplet_lr");
    s["train.qe_lr"] = train_field(&trainer::TrainConfig::qe_lr, "train.qe_lr");
    s["train.batch_size"] = train_field(&trainer::TrainConfig::batch_size, "train.batch_size");
    s["train.triplet_margin"] = train_field(&trainer::TrainConfig::triplet_margin, "train.triplet_margin");
    s["train.cosine_margin"] = train_field(&trainer::TrainConfig::cosine_margin, "train.cosine_margin");
    s["train.norm_p"] = train_field(&trainer::TrainConfig::norm_p, "train.norm_p");
    s["train.weight_decay"] = train_field(&trainer::TrainConfig::weight_decay, "train.weight_decay");
    s["train.max_epochs"] = train_field(&trainer::TrainConfig::max_epochs, "train.max_epochs");
    s["train.patience"] = train_field(&trainer::TrainConfig::patience, "train.patience");
    s["train.init_sigma"] = train_field(&trainer::TrainConfig::init_sigma, "train.init_sigma");
    s["eval.k"] = field(&PipelineConfig::eval_k, "eval.k");
    s["eval.queries"] = [](PipelineConfig& c, const Json& v, const std::filesystem::path& base) {
      c.eval_queries = resolve(base, as<std::string>(v, "eval.queries"));
    };
    return s;
  }();
  return table;
}

PipelineConfig defaults() {
  PipelineConfig c;
  c.embedding.kind = ProviderKind::Stub;
  c.embedding.api_key_env = "LMAR_EMBED_API_KEY";
  c.llm.kind = ProviderKind::Mock;
  c.llm.api_key_env = "LMAR_LLM_API_KEY";
  c.llm.model_name = c.llm_model;
  return c;
}

}  // namespace

PipelineConfig config_from_toml(const std::string& text, const std::filesystem::path& base_dir) {
  PipelineConfig c = defaults();
  for (const auto& [key, value] : parse_toml(text)) {
    auto it = setters().find(key);
    if (it == setters().end()) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
    it->second(c, value, base_dir);
  }
  if (const char* url = std::getenv("LMAR_LLM_BASE_URL"); url && *url) c.llm.base_url = url;
  return c;
}

PipelineConfig load_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return config_from_toml("");
  std::string text;
  try {
    text = read_file(*path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("cannot read config: ") + e.what());
  }
  return config_from_toml(text, path->parent_path());
}

}  // namespace lmar::config
