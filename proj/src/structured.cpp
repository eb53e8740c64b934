#include "lmar/structured.hpp"

#include <cmath>

#include "lmar/error.hpp"
#include "lmar/io.hpp"

namespace lmar::llm {
namespace {

[[noreturn]] void fail(const std::string& why) { throw Error(ErrorCode::ParseFailure, why); }

std::string_view trim(std::string_view s) {
  auto issp = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (!s.empty() && issp(s.front())) s.remove_prefix(1);
  while (!s.empty() && issp(s.back())) s.remove_suffix(1);
  return s;
}

// Matching '}' for the '{' at `start`, or npos.
std::size_t balanced_end(std::string_view s, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\')
        ++i;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"')
      in_string = true;
    else if (c == '{')
      ++depth;
    else if (c == '}' && --depth == 0)
      return i;
  }
  return std::string_view::npos;
}

Json object_of(std::string_view content) {
  auto span = extract_json_object(content);
  if (!span) fail("no JSON object in response");
  return Json::parse(*span);
}

bool is_error_token(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '"' || s.front() == '\'' || s.front() == '`')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == '`' || s.back() == '.')) s.remove_suffix(1);
  return s == "Error" || s == "ERROR" || s == "error";
}

}  // namespace

std::optional<std::string_view> extract_json_object(std::string_view content) {
  for (std::size_t start = content.find('{'); start != std::string_view::npos; start = content.find('{', start + 1)) {
    std::size_t end = balanced_end(content, start);
    if (end == std::string_view::npos) continue;
    auto candidate = content.substr(start, end - start + 1);
    Json parsed = Json::parse(candidate, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return candidate;
  }
  return std::nullopt;
}

TripletLabel parse_triplet_label(std::string_view content) {
  if (is_error_token(content)) return {TripletLabel::Choice::Ambiguous, ""};
  Json obj = object_of(content);
  auto token = obj.find("Token");
  if (token == obj.end() || !token->is_string()) fail("triplet label lacks a string \"Token\"");
  TripletLabel out;
  if (auto reason = obj.find("Reason"); reason != obj.end()) {
    if (!reason->is_string()) fail("triplet \"Reason\" must be a string");
    out.reason = reason->get<std::string>();
  }
  const auto t = token->get<std::string>();
  bool first = t.find("|<1>|") != std::string::npos;
  bool second = t.find("|<2>|") != std::string::npos;
  if (first && !second)
    out.choice = TripletLabel::Choice::First;
  else if (second && !first)
    out.choice = TripletLabel::Choice::Second;
  else if (!first && !second && is_error_token(t))
    out.choice = TripletLabel::Choice::Ambiguous;
  else
    fail("triplet \"Token\" must be |<1>|, |<2>| or Error, got '" + t + "'");
  return out;
}

std::string parse_cluster_description(std::string_view content) {
  Json obj = object_of(content);
  auto it = obj.find("description");
  if (it == obj.end() || !it->is_string()) fail("missing string \"description\"");
  auto text = it->get<std::string>();
  if (trim(text).empty()) fail("empty \"description\"");
  return text;
}

double parse_grade(std::string_view content) {
  Json obj = object_of(content);
  auto it = obj.find("grade");
  if (it == obj.end() || !it->is_number()) fail("missing numeric \"grade\"");
  double g = it->get<double>();
  if (!std::isfinite(g) || g < 0.0 || g > 1.0) fail("grade " + it->dump() + " outside [0, 1]");
  return g;
}

std::vector<QaDraft> parse_qa_pairs(std::string_view content) {
  Json obj = object_of(content);
  auto it = obj.find("qa_pairs");
  if (it == obj.end() || !it->is_array()) fail("missing array \"qa_pairs\"");
  std::vector<QaDraft> out;
  for (const auto& item : *it) {
    if (!item.is_object()) fail("qa_pairs entry is not an object");
    auto q = item.find("question");
    auto ev = item.find("evidence_ids");
    if (q == item.end() || !q->is_string() || trim(q->get_ref<const std::string&>()).empty())
      fail("qa_pairs entry lacks a question");
    if (ev == item.end() || !ev->is_array()) fail("qa_pairs entry lacks evidence_ids");
    QaDraft draft;
    draft.question = q->get<std::string>();
    for (const auto& id : *ev) {
      if (id.is_number_integer())
        draft.evidence_ids.push_back(id.get<std::int64_t>());
      else if (id.is_number_float() && std::floor(id.get<double>()) == id.get<double>() &&
               std::abs(id.get<double>()) < 9e15)
        draft.evidence_ids.push_back(static_cast<std::int64_t>(id.get<double>()));
      else
        fail("evidence id " + id.dump() + " is not an integer");
    }
    out.push_back(std::move(draft));
  }
  return out;
}

StructuredValue parse_structured(std::string_view content, SchemaKind schema) {
  switch (schema) {
    case SchemaKind::TripletLabel: return parse_triplet_label(content);
    case SchemaKind::ClusterDescription: return parse_cluster_description(content);
    case SchemaKind::QaGrade: return parse_grade(content);
    case SchemaKind::QaPairs: return parse_qa_pairs(content);
  }
  fail("unknown schema");
}

}  // namespace lmar::llm
