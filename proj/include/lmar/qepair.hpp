#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmar/clustering.hpp"
#include "lmar/llm_gateway.hpp"

namespace lmar::qepair {

struct ClusterDescription {
  std::size_t cluster_index;
  std::string description;
};

enum class Polarity { Positive, Negative };

struct QEPair {
  std::string question;
  std::vector<ParaId> evidence_ids;
  /// Validator confidence; weights positive pairs only.
  double grade = 1.0;
  Polarity polarity = Polarity::Positive;
  std::size_t cluster_index = 0;
  /// "train", "val", or empty before splitting.
  std::string split;
};

struct SynthesisOptions {
  std::string model;
  double label_temperature = 0.0;
  double generation_temperature = 0.7;
  std::size_t max_question_num = 5;
  int reprompts = 1;
  std::string stage = "qepairs";
};

/// nullopt when the response stays unreadable after the re-prompt; the
/// caller then excludes the cluster from generation.
std::optional<ClusterDescription> describe_cluster(llm::Gateway& gateway, const clustering::Cluster& cluster,
                                                   std::size_t cluster_index, std::span<const std::string> texts,
                                                   const SynthesisOptions& options = {});

struct GenerationResult {
  std::vector<QEPair> pairs;
  std::size_t dropped_foreign = 0;  // cited an id outside the cluster
  std::size_t dropped_empty = 0;    // cited nothing
  std::size_t dropped_excess = 0;   // beyond max_question_num
  bool skipped = false;             // unreadable after the re-prompt
};

/// Positive pairs (grade still 1.0) whose evidence ids all belong to the
/// cluster; ids are de-duplicated in citation order.
GenerationResult generate_qa(llm::Gateway& gateway, const clustering::Cluster& cluster, std::size_t cluster_index,
                             const std::string& description, std::span<const std::string> texts,
                             const SynthesisOptions& options = {});

struct GradeResult {
  double grade;
  bool parse_failed;  // grade fell back to 0
};

GradeResult grade_qa(llm::Gateway& gateway, const QEPair& pair, std::span<const std::string> texts,
                     const SynthesisOptions& options = {});

/// ratio negatives per positive, in positive order. Each negative keeps the
/// positive's question and draws as many paragraphs as the positive cites,
/// uniformly without replacement from ids outside the source cluster:
/// repeated uniform_index(n_paragraphs) draws, rejecting cluster members
/// and ids already chosen for this negative.
std::vector<QEPair> sample_negatives(std::span<const QEPair> positives, std::span<const clustering::Cluster> clusters,
                                     std::size_t n_paragraphs, std::size_t ratio, std::uint64_t rng_seed);

/// Splits by question string so a question's positive and negatives stay
/// together. round(fraction * questions) questions (clamped to [1, q-1]) go
/// to validation. Sets each pair's `split` field.
std::pair<std::vector<QEPair>, std::vector<QEPair>> split_train_val(std::span<const QEPair> pairs, double fraction,
                                                                    std::uint64_t rng_seed);

struct SynthesisStats {
  std::size_t clusters = 0;
  std::size_t clusters_excluded = 0;
  std::size_t generation_skipped = 0;
  std::size_t pairs_dropped_foreign = 0;
  std::size_t pairs_dropped_empty = 0;
  std::size_t pairs_dropped_excess = 0;
  std::size_t grade_parse_failures = 0;
};

struct SynthesisResult {
  std::vector<ClusterDescription> descriptions;
  std::vector<QEPair> positives;
  SynthesisStats stats;
};

/// describe -> generate -> grade for every cluster, parallel across
/// clusters; output ordered by cluster index. Writes descriptions back onto
/// `clusters`.
SynthesisResult synthesize(llm::Gateway& gateway, std::vector<clustering::Cluster>& clusters,
                           std::span<const std::string> texts, const SynthesisOptions& options = {});

struct GroundingReport {
  std::size_t ungrounded_positives = 0;
  std::size_t overlapping_negatives = 0;
  std::size_t bad_cluster_index = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t leaked_questions = 0;

  bool ok(std::size_t expected_ratio) const {
    return ungrounded_positives == 0 && overlapping_negatives == 0 && bad_cluster_index == 0 &&
           leaked_questions == 0 && negatives == expected_ratio * positives;
  }
};

/// Independent re-check of grounding, negative disjointness, ratio and
/// train/val leakage.
GroundingReport validate_pairs(std::span<const QEPair> pairs, std::span<const clustering::Cluster> clusters);

std::string serialize_pairs(std::span<const QEPair> pairs);
std::vector<QEPair> load_pairs(const std::filesystem::path& path);

}  // namespace lmar::qepair
