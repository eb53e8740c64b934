#include <functional>

#include "doctest.h"
#include "lmar/error.hpp"
#include "lmar/evalkit.hpp"
#include "support.hpp"

using namespace lmar;
using namespace lmar::evalkit;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an lmar::Error");
  return ErrorCode::InvalidArgument;
}

EvalQuery q(std::vector<ParaId> gold, std::vector<double> emb = {1.0, 0.0}) {
  return {"q", std::move(gold), embedding::normalize(EmbeddingVector(std::move(emb)))};
}

// Ranking of length `len` whose only gold hit (id 100) sits at `rank`.
Ranking with_gold_at(std::size_t rank, std::size_t len = 10) {
  Ranking r;
  for (std::size_t i = 1; i <= len; ++i) r.push_back(i == rank ? 100 : static_cast<ParaId>(i));
  return r;
}

}  // namespace

TEST_CASE("accuracy and MRR") {
  std::vector<EvalQuery> qs{q({100}), q({100}), q({100})};
  std::vector<Ranking> rs{with_gold_at(1), with_gold_at(6), with_gold_at(3)};
  CHECK(accuracy_at_k(rs, qs, 5) == doctest::Approx(2.0 / 3.0));
  CHECK(accuracy_at_k(rs, qs, 6) == 1.0);

  std::vector<EvalQuery> two{q({100}), q({100})};
  std::vector<Ranking> r2{with_gold_at(1), with_gold_at(6)};
  CHECK(mrr(r2, two) == doctest::Approx(0.58333).epsilon(1e-4));
  std::vector<Ranking> cut{with_gold_at(1, 5), with_gold_at(6, 5)};
  CHECK(mrr(cut, two) == doctest::Approx(0.5));

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<EvalQuery> many;
    std::vector<Ranking> ranks;
    for (int i = 0; i < 10; ++i) {
      many.push_back(q({100}));
      ranks.push_back(with_gold_at(1 + rng.uniform_index(12), 10));
    }
    double prev = 0;
    for (std::size_t k = 1; k <= 10; ++k) {
      double acc = accuracy_at_k(ranks, many, k);
      CHECK(acc >= prev);
      prev = acc;
    }
    double m = mrr(ranks, many);
    CHECK(m >= 0.0);
    CHECK(m <= accuracy_at_k(ranks, many, 10));
  }
}

TEST_CASE("tf_score") {
  std::vector<std::string> r1{"the cat sat"};
  CHECK(tf_score("The cat", r1) == doctest::Approx(0.6667).epsilon(1e-3));
  std::vector<std::string> r2{"a a b"};
  CHECK(tf_score("a a b", r2) == doctest::Approx(5.0 / 3.0));
  std::vector<std::string> r3{"x y z"};
  CHECK(tf_score("a b", r3) == 0.0);
  std::vector<std::string> split{"the", "cat sat"};
  CHECK(tf_score("The cat", split) == tf_score("The cat", r1));
  std::vector<std::string> swapped{"cat sat", "the"};
  CHECK(tf_score("The cat", swapped) == tf_score("The cat", split));
  std::vector<std::string> empty{"", " "};
  CHECK(code_of([&] { tf_score("a", empty); }) == ErrorCode::EmptyRetrieval);
}

TEST_CASE("avg_similarity") {
  std::vector<embedding::EmbeddingVector> rows{EmbeddingVector({1.0, 0.0}), EmbeddingVector({0.0, 1.0})};
  auto m = EmbeddingMatrix::from_vectors(rows);
  // cos = 0.2 against row 0 and 0.6 against row 1 (via a 2-component query).
  std::vector<EvalQuery> qs{q({0}, {0.2, std::sqrt(1 - 0.04)}), q({1}, {std::sqrt(1 - 0.36), 0.6})};
  CHECK(avg_similarity(qs, m) == doctest::Approx(0.4).epsilon(1e-6));
  std::vector<EvalQuery> none;
  CHECK(code_of([&] { avg_similarity(none, m); }) == ErrorCode::NoQueries);
}

TEST_CASE("retrieve and evaluate_all") {
  auto m = testing::planted_matrix(40, 8, 4, 0.4, 9);
  std::vector<std::string> texts;
  for (int i = 0; i < 40; ++i) texts.push_back("para " + std::to_string(i) + " words");
  std::vector<EvalQuery> qs;
  for (ParaId i = 0; i < 10; ++i) qs.push_back({"q", {i}, m.row_vector(i)});
  auto report = evaluate_all(qs, m, texts, 5);
  CHECK(report.accuracy == 1.0);
  CHECK(report.mrr == 1.0);
  CHECK(report.n_queries == 10);
  CHECK(report.avg_similarity == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(MetricsReport::from_json(report.to_json()).to_json() == report.to_json());
  CHECK(retrieve(qs[3], m, 5).front() == 3);
  CHECK(retrieve(qs[3], m, 5).size() == 5);

  CHECK(code_of([&] { evaluate_all(qs, EmbeddingMatrix{}, texts, 5); }) == ErrorCode::EmptyIndex);
  std::vector<EvalQuery> none;
  CHECK(code_of([&] { evaluate_all(none, m, texts, 5); }) == ErrorCode::NoQueries);
}

TEST_CASE("identity adapter reproduces raw retrieval") {
  embedding::StubEmbeddingProvider stub(64);
  std::vector<std::string> texts{"hip fracture imaging", "stock market rally", "ultrasound of fractures",
                                 "bond yields fall", "bone healing after fracture"};
  auto m = EmbeddingMatrix::from_vectors(stub.embed(texts));
  std::vector<std::string> questions{"fracture ultrasound", "market yields"};
  std::vector<std::vector<ParaId>> gold{{0, 2}, {1, 3}};
  auto qs = embed_queries(questions, gold, stub, trainer::AdapterParams::identity(64));
  auto raw = evaluate_all(qs, m, texts, 2);
  auto adapted = evaluate_all(qs, trainer::adapt_index(trainer::AdapterParams::identity(64), m), texts, 2);
  CHECK(raw.accuracy == adapted.accuracy);
  CHECK(raw.mrr == adapted.mrr);
  CHECK(raw.tf_score == adapted.tf_score);
  CHECK(raw.avg_similarity == doctest::Approx(adapted.avg_similarity).epsilon(1e-6));
  for (std::size_t i = 0; i < qs.size(); ++i)
    CHECK(qs[i].question_embedding.components == embedding::normalize(stub.embed_one(questions[i])).components);
}

TEST_CASE("eval_queries.jsonl round-trip") {
  std::vector<QuerySpec> qs{{"What?", {1, 2}}, {"Why?", {0}}};
  auto dir = testing::scratch("eval_queries");
  write_file(dir / "q.jsonl", serialize_queries(qs));
  auto back = load_queries(dir / "q.jsonl");
  CHECK(serialize_queries(back) == serialize_queries(qs));
}
