#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace lmar::llm {

enum class SchemaKind { TripletLabel, ClusterDescription, QaGrade, QaPairs };

struct TripletLabel {
  enum class Choice { First, Second, Ambiguous };
  Choice choice = Choice::Ambiguous;
  std::string reason;
};

struct QaDraft {
  std::string question;
  std::vector<std::int64_t> evidence_ids;
};

/// TripletLabel | description | grade | generated pairs, by schema.
using StructuredValue = std::variant<TripletLabel, std::string, double, std::vector<QaDraft>>;

/// First '{' ... '}' span (string- and escape-aware) that parses as a JSON
/// object. Surrounding prose is ignored.
std::optional<std::string_view> extract_json_object(std::string_view content);

// Each parser throws Error(ParseFailure) when no valid value can be read.
TripletLabel parse_triplet_label(std::string_view content);
std::string parse_cluster_description(std::string_view content);
double parse_grade(std::string_view content);
std::vector<QaDraft> parse_qa_pairs(std::string_view content);

StructuredValue parse_structured(std::string_view content, SchemaKind schema);

}  // namespace lmar::llm
