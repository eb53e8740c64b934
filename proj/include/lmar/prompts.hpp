#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmar/corpus.hpp"

namespace lmar::prompts {

// System prompts sent verbatim to the LLM.
extern const std::string_view kTripletLabeling;
extern const std::string_view kClusterDescription;
extern const std::string_view kQaGrading;
/// Generation prompt with {max_question_num} substituted.
std::string qa_generation(std::size_t max_question_num);

std::string triplet_user(std::string_view anchor, std::string_view candidate1, std::string_view candidate2);
std::string cluster_description_user(const std::vector<std::string_view>& paragraphs);
/// Paragraphs are rendered as `<corpus id>: "<text>"`, one per line.
std::string qa_generation_user(std::string_view summary, const std::vector<std::pair<ParaId, std::string_view>>& paragraphs);
std::string qa_grading_user(std::string_view question, std::string_view evidence);

}  // namespace lmar::prompts
