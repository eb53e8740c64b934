#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lmar/corpus.hpp"
#include "lmar/embedding.hpp"
#include "lmar/io.hpp"
#include "lmar/trainer.hpp"

namespace lmar::evalkit {

using embedding::EmbeddingMatrix;
using embedding::EmbeddingVector;

struct EvalQuery {
  std::string question;
  std::vector<ParaId> gold_ids;
  /// Already passed through the adapter under evaluation.
  EmbeddingVector question_embedding;
};

struct MetricsReport {
  double accuracy = 0.0;
  double mrr = 0.0;
  double tf_score = 0.0;
  double avg_similarity = 0.0;
  std::size_t k = 5;
  std::size_t n_queries = 0;

  Json to_json() const;
  static MetricsReport from_json(const Json& j);
};

using Ranking = std::vector<ParaId>;

/// Top-k para ids for one query.
Ranking retrieve(const EvalQuery& query, const EmbeddingMatrix& index, std::size_t k = 5);

/// Fraction of queries with any gold id in the first k entries of their ranking.
double accuracy_at_k(std::span<const Ranking> results, std::span<const EvalQuery> queries, std::size_t k = 5);

/// Mean of 1 / rank of the first gold id. A ranking is its own cutoff: no gold
/// in it contributes 0.
double mrr(std::span<const Ranking> results, std::span<const EvalQuery> queries);

/// Sum_i TF_e(i) * TF_r(i) / Sum_i TF_r(i) over lowercased tokens, with r the
/// concatenation of the retrieved texts.
double tf_score(const std::string& evidence_text, std::span<const std::string> retrieved_texts);

/// Mean cosine between each question and the normalized mean of its gold
/// paragraphs' rows in `index`.
double avg_similarity(std::span<const EvalQuery> queries, const EmbeddingMatrix& index);

/// Retrieval plus all four metrics. `texts` is indexed by para id. The
/// tf_score is the per-query mean, with gold paragraphs joined by blank lines.
MetricsReport evaluate_all(std::span<const EvalQuery> queries, const EmbeddingMatrix& index,
                           std::span<const std::string> texts, std::size_t k = 5);

/// Builds queries by embedding each question through `provider` and `adapter`.
std::vector<EvalQuery> embed_queries(std::span<const std::string> questions, std::span<const std::vector<ParaId>> gold,
                                     embedding::EmbeddingProvider& provider, const trainer::AdapterParams& adapter);

struct QuerySpec {
  std::string question;
  std::vector<ParaId> gold_ids;
};

/// eval_queries.jsonl: {"question", "gold_ids"} per line.
std::string serialize_queries(std::span<const QuerySpec> queries);
std::vector<QuerySpec> load_queries(const std::filesystem::path& path);

}  // namespace lmar::evalkit
