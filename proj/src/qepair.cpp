#include "lmar/qepair.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "lmar/error.hpp"
#include "lmar/prompts.hpp"
#include "lmar/rng.hpp"
#include "lmar/structured.hpp"

namespace lmar::qepair {
namespace {

const std::string& text_of(std::span<const std::string> texts, ParaId id) {
  if (id >= texts.size()) throw Error(ErrorCode::InvalidArgument, "no text for paragraph " + std::to_string(id));
  return texts[id];
}

// Sends `req`, parses with `parse`; one re-prompt on ParseFailure.
template <typename Parse>
auto ask(llm::Gateway& gateway, const std::string& stage, llm::ChatRequest req, int reprompts, Parse parse)
    -> std::optional<decltype(parse(std::string_view{}))> {
  for (int attempt = 0; attempt <= reprompts; ++attempt) {
    if (attempt > 0) req.user_content += "\n\nReply with the JSON object only.";
    auto resp = gateway.complete(stage, req);
    try {
      return parse(resp.content);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ParseFailure) throw;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<ClusterDescription> describe_cluster(llm::Gateway& gateway, const clustering::Cluster& cluster,
                                                   std::size_t cluster_index, std::span<const std::string> texts,
                                                   const SynthesisOptions& options) {
  if (cluster.member_ids.empty()) throw Error(ErrorCode::InvalidArgument, "cannot describe an empty cluster");
  std::vector<std::string_view> paragraphs;
  for (auto id : cluster.member_ids) paragraphs.push_back(text_of(texts, id));
  llm::ChatRequest req;
  req.model = options.model;
  req.temperature = options.label_temperature;
  req.system_prompt = std::string(prompts::kClusterDescription);
  req.user_content = prompts::cluster_description_user(paragraphs);
  auto text = ask(gateway, options.stage, req, options.reprompts, llm::parse_cluster_description);
  if (!text) return std::nullopt;
  return ClusterDescription{cluster_index, std::move(*text)};
}

GenerationResult generate_qa(llm::Gateway& gateway, const clustering::Cluster& cluster, std::size_t cluster_index,
                             const std::string& description, std::span<const std::string> texts,
                             const SynthesisOptions& options) {
  std::vector<std::pair<ParaId, std::string_view>> paragraphs;
  for (auto id : cluster.member_ids) paragraphs.emplace_back(id, text_of(texts, id));
  llm::ChatRequest req;
  req.model = options.model;
  req.temperature = options.generation_temperature;
  req.system_prompt = prompts::qa_generation(options.max_question_num);
  req.user_content = prompts::qa_generation_user(description, paragraphs);

  GenerationResult result;
  auto drafts = ask(gateway, options.stage, req, options.reprompts, llm::parse_qa_pairs);
  if (!drafts) {
    result.skipped = true;
    return result;
  }
  std::unordered_set<std::int64_t> members(cluster.member_ids.begin(), cluster.member_ids.end());
  for (auto& draft : *drafts) {
    QEPair pair;
    pair.question = std::move(draft.question);
    pair.cluster_index = cluster_index;
    bool foreign = false;
    for (auto id : draft.evidence_ids) {
      if (!members.contains(id)) {
        foreign = true;
        break;
      }
      auto pid = static_cast<ParaId>(id);
      if (std::find(pair.evidence_ids.begin(), pair.evidence_ids.end(), pid) == pair.evidence_ids.end())
        pair.evidence_ids.push_back(pid);
    }
    if (foreign)
      ++result.dropped_foreign;
    else if (pair.evidence_ids.empty())
      ++result.dropped_empty;
    else if (result.pairs.size() >= options.max_question_num)
      ++result.dropped_excess;
    else
      result.pairs.push_back(std::move(pair));
  }
  return result;
}

GradeResult grade_qa(llm::Gateway& gateway, const QEPair& pair, std::span<const std::string> texts,
                     const SynthesisOptions& options) {
  if (pair.polarity != Polarity::Positive) throw Error(ErrorCode::InvalidArgument, "only positive pairs are graded");
  std::string evidence;
  for (auto id : pair.evidence_ids) {
    if (!evidence.empty()) evidence += "\n";
    evidence += text_of(texts, id);
  }
  llm::ChatRequest req;
  req.model = options.model;
  req.temperature = options.label_temperature;
  req.system_prompt = std::string(prompts::kQaGrading);
  req.user_content = prompts::qa_grading_user(pair.question, evidence);
  auto grade = ask(gateway, options.stage, req, options.reprompts, llm::parse_grade);
  if (!grade) return {0.0, true};
  return {*grade, false};
}

std::vector<QEPair> sample_negatives(std::span<const QEPair> positives, std::span<const clustering::Cluster> clusters,
                                     std::size_t n_paragraphs, std::size_t ratio, std::uint64_t rng_seed) {
  std::vector<QEPair> out;
  if (ratio == 0) return out;
  Rng rng(rng_seed);
  std::vector<char> in_cluster(n_paragraphs, 0);
  for (const auto& pos : positives) {
    if (pos.cluster_index >= clusters.size())
      throw Error(ErrorCode::InvalidArgument, "pair refers to unknown cluster " + std::to_string(pos.cluster_index));
    const auto& members = clusters[pos.cluster_index].member_ids;
    std::size_t need = pos.evidence_ids.size();
    std::size_t outside = n_paragraphs - std::min(n_paragraphs, members.size());
    if (outside < need)
      throw Error(ErrorCode::CorpusTooSmall, "only " + std::to_string(outside) + " paragraphs lie outside cluster " +
                                                 std::to_string(pos.cluster_index) + ", need " + std::to_string(need));
    for (auto id : members)
      if (id < n_paragraphs) in_cluster[id] = 1;
    for (std::size_t r = 0; r < ratio; ++r) {
      QEPair neg;
      neg.question = pos.question;
      neg.polarity = Polarity::Negative;
      neg.grade = 1.0;
      neg.cluster_index = pos.cluster_index;
      while (neg.evidence_ids.size() < need) {
        auto id = static_cast<ParaId>(rng.uniform_index(n_paragraphs));
        if (in_cluster[id] || std::find(neg.evidence_ids.begin(), neg.evidence_ids.end(), id) != neg.evidence_ids.end())
          continue;
        neg.evidence_ids.push_back(id);
      }
      out.push_back(std::move(neg));
    }
    for (auto id : members)
      if (id < n_paragraphs) in_cluster[id] = 0;
  }
  return out;
}

std::pair<std::vector<QEPair>, std::vector<QEPair>> split_train_val(std::span<const QEPair> pairs, double fraction,
                                                                    std::uint64_t rng_seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidArgument, "split fraction must lie in (0, 1)");
  std::vector<std::string> questions;
  std::unordered_map<std::string, std::size_t> group_of;
  for (const auto& p : pairs)
    if (group_of.try_emplace(p.question, questions.size()).second) questions.push_back(p.question);
  if (questions.size() < 2)
    throw Error(ErrorCode::TooFewQuestions, "need at least 2 distinct questions to split, got " + std::to_string(questions.size()));

  std::vector<std::size_t> order(questions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(rng_seed);
  rng.shuffle(std::span<std::size_t>(order));
  auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(questions.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, questions.size() - 1);
  std::vector<char> is_val(questions.size(), 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;

  std::pair<std::vector<QEPair>, std::vector<QEPair>> out;
  for (const auto& p : pairs) {
    QEPair copy = p;
    bool val = is_val[group_of.at(p.question)] != 0;
    copy.split = val ? "val" : "train";
    (val ? out.second : out.first).push_back(std::move(copy));
  }
  return out;
}

SynthesisResult synthesize(llm::Gateway& gateway, std::vector<clustering::Cluster>& clusters,
                           std::span<const std::string> texts, const SynthesisOptions& options) {
  struct PerCluster {
    std::optional<ClusterDescription> description;
    GenerationResult generation;
    std::size_t grade_failures = 0;
  };
  std::vector<PerCluster> work(clusters.size());
  gateway.for_each(clusters.size(), [&](std::size_t ci) {
    auto& w = work[ci];
    w.description = describe_cluster(gateway, clusters[ci], ci, texts, options);
    if (!w.description) return;
    w.generation = generate_qa(gateway, clusters[ci], ci, w.description->description, texts, options);
    for (auto& pair : w.generation.pairs) {
      auto g = grade_qa(gateway, pair, texts, options);
      pair.grade = g.grade;
      if (g.parse_failed) ++w.grade_failures;
    }
  });

  SynthesisResult result;
  result.stats.clusters = clusters.size();
  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    auto& w = work[ci];
    if (!w.description) {
      ++result.stats.clusters_excluded;
      continue;
    }
    clusters[ci].description = w.description->description;
    result.descriptions.push_back(std::move(*w.description));
    if (w.generation.skipped) ++result.stats.generation_skipped;
    result.stats.pairs_dropped_foreign += w.generation.dropped_foreign;
    result.stats.pairs_dropped_empty += w.generation.dropped_empty;
    result.stats.pairs_dropped_excess += w.generation.dropped_excess;
    result.stats.grade_parse_failures += w.grade_failures;
    for (auto& p : w.generation.pairs) result.positives.push_back(std::move(p));
  }
  return result;
}

GroundingReport validate_pairs(std::span<const QEPair> pairs, std::span<const clustering::Cluster> clusters) {
  GroundingReport report;
  std::map<std::string, std::set<std::string>> splits_of;
  for (const auto& p : pairs) {
    if (!p.split.empty()) splits_of[p.question].insert(p.split);
    if (p.polarity == Polarity::Positive)
      ++report.positives;
    else
      ++report.negatives;
    if (p.cluster_index >= clusters.size()) {
      ++report.bad_cluster_index;
      continue;
    }
    const auto& members = clusters[p.cluster_index].member_ids;
    auto member = [&](ParaId id) { return std::find(members.begin(), members.end(), id) != members.end(); };
    if (p.polarity == Polarity::Positive) {
      if (p.evidence_ids.empty() || !std::all_of(p.evidence_ids.begin(), p.evidence_ids.end(), member))
        ++report.ungrounded_positives;
    } else if (std::any_of(p.evidence_ids.begin(), p.evidence_ids.end(), member)) {
      ++report.overlapping_negatives;
    }
  }
  for (const auto& [_, s] : splits_of)
    if (s.size() > 1) ++report.leaked_questions;
  return report;
}

std::string serialize_pairs(std::span<const QEPair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    Json rec;
    rec["question"] = p.question;
    rec["evidence_ids"] = p.evidence_ids;
    rec["grade"] = p.grade;
    rec["polarity"] = p.polarity == Polarity::Positive ? "positive" : "negative";
    rec["cluster_index"] = p.cluster_index;
    rec["split"] = p.split;
    out += to_jsonl_line(rec);
  }
  return out;
}

std::vector<QEPair> load_pairs(const std::filesystem::path& path) {
  std::vector<QEPair> out;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      QEPair p;
      p.question = rec.at("question").get<std::string>();
      p.evidence_ids = rec.at("evidence_ids").get<std::vector<ParaId>>();
      p.grade = rec.at("grade").get<double>();
      auto pol = rec.at("polarity").get<std::string>();
      if (pol != "positive" && pol != "negative") throw Error(ErrorCode::MalformedRecord, "bad polarity '" + pol + "'");
      p.polarity = pol == "positive" ? Polarity::Positive : Polarity::Negative;
      p.cluster_index = rec.at("cluster_index").get<std::size_t>();
      p.split = rec.value("split", "");
      out.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace lmar::qepair
