#include "lmar/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "lmar/error.hpp"

namespace lmar::evalkit {

namespace {

void require_aligned(std::span<const Ranking> results, std::span<const EvalQuery> queries) {
  if (queries.empty()) throw Error(ErrorCode::NoQueries, "no evaluation queries");
  if (results.size() != queries.size())
    throw Error(ErrorCode::InvalidArgument, "ranking count does not match query count");
}

}  // namespace

Json MetricsReport::to_json() const {
  Json j;
  j["accuracy"] = accuracy;
  j["mrr"] = mrr;
  j["tf_score"] = tf_score;
  j["avg_similarity"] = avg_similarity;
  j["k"] = k;
  j["n_queries"] = n_queries;
  return j;
}

MetricsReport MetricsReport::from_json(const Json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.mrr = j.at("mrr").get<double>();
  r.tf_score = j.at("tf_score").get<double>();
  r.avg_similarity = j.at("avg_similarity").get<double>();
  r.k = j.at("k").get<std::size_t>();
  r.n_queries = j.at("n_queries").get<std::size_t>();
  return r;
}

Ranking retrieve(const EvalQuery& query, const EmbeddingMatrix& index, std::size_t k) {
  Ranking out;
  for (const auto& h : embedding::top_k(query.question_embedding, index, k)) out.push_back(h.id);
  return out;
}

double accuracy_at_k(std::span<const Ranking> results, std::span<const EvalQuery> queries, std::size_t k) {
  require_aligned(results, queries);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& gold = queries[q].gold_ids;
    std::size_t limit = std::min(k, results[q].size());
    for (std::size_t r = 0; r < limit; ++r)
      if (std::find(gold.begin(), gold.end(), results[q][r]) != gold.end()) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double mrr(std::span<const Ranking> results, std::span<const EvalQuery> queries) {
  require_aligned(results, queries);
  double total = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& gold = queries[q].gold_ids;
    for (std::size_t r = 0; r < results[q].size(); ++r)
      if (std::find(gold.begin(), gold.end(), results[q][r]) != gold.end()) {
        total += 1.0 / static_cast<double>(r + 1);
        break;
      }
  }
  return total / static_cast<double>(queries.size());
}

double tf_score(const std::string& evidence_text, std::span<const std::string> retrieved_texts) {
  std::map<std::string, double> tf_e;
  for (auto& t : corpus::tokenize(evidence_text, true)) tf_e[t] += 1.0;
  double num = 0.0, den = 0.0;
  for (const auto& text : retrieved_texts)
    for (auto& t : corpus::tokenize(text, true)) {
      den += 1.0;
      auto it = tf_e.find(t);
      if (it != tf_e.end()) num += it->second;
    }
  if (den == 0.0) throw Error(ErrorCode::EmptyRetrieval, "retrieved text has no tokens");
  return num / den;
}

namespace {

EmbeddingVector gold_embedding(const EvalQuery& q, const EmbeddingMatrix& index) {
  if (q.gold_ids.empty()) throw Error(ErrorCode::InvalidArgument, "query has no gold ids");
  std::vector<double> mean(index.d(), 0.0);
  for (ParaId id : q.gold_ids) {
    std::size_t pos = index.position_of(id);
    if (pos == index.n()) throw Error(ErrorCode::InvalidArgument, "gold id " + std::to_string(id) + " not in index");
    auto row = index.row(pos);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += static_cast<double>(row[i]) / q.gold_ids.size();
  }
  return embedding::normalize(EmbeddingVector(std::move(mean)));
}

}  // namespace

double avg_similarity(std::span<const EvalQuery> queries, const EmbeddingMatrix& index) {
  if (queries.empty()) throw Error(ErrorCode::NoQueries, "no evaluation queries");
  double total = 0.0;
  for (const auto& q : queries) total += embedding::cosine_similarity(q.question_embedding, gold_embedding(q, index));
  return total / static_cast<double>(queries.size());
}

MetricsReport evaluate_all(std::span<const EvalQuery> queries, const EmbeddingMatrix& index,
                           std::span<const std::string> texts, std::size_t k) {
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "retrieval index is empty");
  if (queries.empty()) throw Error(ErrorCode::NoQueries, "no evaluation queries");
  std::vector<Ranking> results;
  results.reserve(queries.size());
  for (const auto& q : queries) results.push_back(retrieve(q, index, k));

  MetricsReport r;
  r.k = k;
  r.n_queries = queries.size();
  r.accuracy = accuracy_at_k(results, queries, k);
  r.mrr = mrr(results, queries);
  r.avg_similarity = avg_similarity(queries, index);
  double tf_total = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::string evidence;
    for (ParaId id : queries[q].gold_ids) {
      if (id >= texts.size()) throw Error(ErrorCode::InvalidArgument, "gold id outside corpus");
      if (!evidence.empty()) evidence += "\n\n";
      evidence += texts[id];
    }
    std::vector<std::string> retrieved;
    for (ParaId id : results[q]) {
      if (id >= texts.size()) throw Error(ErrorCode::InvalidArgument, "retrieved id outside corpus");
      retrieved.push_back(texts[id]);
    }
    tf_total += tf_score(evidence, retrieved);
  }
  r.tf_score = tf_total / static_cast<double>(queries.size());
  return r;
}

std::vector<EvalQuery> embed_queries(std::span<const std::string> questions, std::span<const std::vector<ParaId>> gold,
                                     embedding::EmbeddingProvider& provider, const trainer::AdapterParams& adapter) {
  if (questions.size() != gold.size()) throw Error(ErrorCode::InvalidArgument, "questions and gold lists differ in length");
  if (questions.empty()) throw Error(ErrorCode::NoQueries, "no evaluation queries");
  auto raw = embedding::embed_batch(provider, questions);
  std::vector<EvalQuery> out;
  out.reserve(questions.size());
  for (std::size_t i = 0; i < questions.size(); ++i)
    out.push_back({questions[i], gold[i], trainer::apply_adapter(adapter, embedding::normalize(raw[i]))});
  return out;
}

std::string serialize_queries(std::span<const QuerySpec> queries) {
  std::string out;
  for (const auto& q : queries) out += to_jsonl_line(Json{{"question", q.question}, {"gold_ids", q.gold_ids}});
  return out;
}

std::vector<QuerySpec> load_queries(const std::filesystem::path& path) {
  std::vector<QuerySpec> out;
  for_each_jsonl(path, [&](std::size_t line, const Json& j) {
    try {
      QuerySpec q{j.at("question").get<std::string>(), j.at("gold_ids").get<std::vector<ParaId>>()};
      if (q.gold_ids.empty()) throw Error(ErrorCode::MalformedRecord, "empty gold_ids");
      out.push_back(std::move(q));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace lmar::evalkit
