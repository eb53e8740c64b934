#include <functional>
#include <memory>
#include <set>

#include "doctest.h"
#include "lmar/error.hpp"
#include "lmar/triplet.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace lmar;
using namespace lmar::triplet;
using embedding::EmbeddingMatrix;

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

std::unique_ptr<llm::Gateway> scripted(std::vector<std::string> contents) {
  std::vector<llm::ScriptEntry> s;
  for (auto& c : contents) s.push_back({std::nullopt, c, 10, 5});
  return std::make_unique<llm::Gateway>(std::make_unique<llm::ScriptedChatProvider>(s));
}

const std::vector<std::string> kTexts{"anchor", "first", "second"};

}  // namespace

TEST_CASE("n = 3 forces the other two rows as candidates") {
  auto m = testing::planted_matrix(3, 4, 0, 1.0, 1);
  auto cs = sample_triplet_candidates(m, 5, 50, 9);
  CHECK(!cs.empty());
  CHECK(cs.size() <= 6);
  for (const auto& c : cs) {
    std::set<ParaId> all{c.anchor_id, c.cand1_id, c.cand2_id};
    CHECK(all == std::set<ParaId>{0, 1, 2});
  }
  CHECK(code_of([&] { sample_triplet_candidates(testing::planted_matrix(2, 4, 0, 1.0, 1), 5, 5, 1); }) ==
        ErrorCode::CorpusTooSmall);
}

TEST_CASE("candidates come from the anchor's top-k neighbours") {
  auto m = testing::planted_matrix(50, 16, 5, 0.7, 4);
  const std::size_t k = 6;
  auto cs = sample_triplet_candidates(m, k, 200, 2);
  std::set<std::tuple<ParaId, ParaId, ParaId>> keys;
  for (const auto& c : cs) {
    // Independent neighbour set: rank every other row by similarity.
    std::vector<std::pair<double, ParaId>> sims;
    for (std::size_t j = 0; j < m.n(); ++j) {
      if (j == c.anchor_id) continue;
      double s = 0;
      for (std::size_t t = 0; t < m.d(); ++t)
        s += static_cast<double>(m.row(c.anchor_id)[t]) * static_cast<double>(m.row(j)[t]);
      sims.push_back({-s, static_cast<ParaId>(j)});
    }
    std::sort(sims.begin(), sims.end());
    std::set<ParaId> top;
    for (std::size_t i = 0; i < k; ++i) top.insert(sims[i].second);
    CHECK(top.count(c.cand1_id) == 1);
    CHECK(top.count(c.cand2_id) == 1);
    CHECK(c.cand1_id != c.cand2_id);
    CHECK(c.anchor_id != c.cand1_id);
    CHECK(keys.insert({c.anchor_id, std::min(c.cand1_id, c.cand2_id), std::max(c.cand1_id, c.cand2_id)}).second);
  }
  CHECK(sample_triplet_candidates(m, k, 200, 2) == cs);
  CHECK(sample_triplet_candidates(m, k, 200, 3) != cs);
}

TEST_CASE("label_triplet maps tokens to positive and negative") {
  TripletCandidate c{0, 1, 2};
  SUBCASE("|<2>| swaps the candidates") {
    auto gw = scripted({R"({"Reason": "r", "Token": "|<2>|"})"});
    auto out = std::get<LabeledTriplet>(label_triplet(*gw, c, kTexts, {"m"}));
    CHECK(out.positive_id == 2);
    CHECK(out.negative_id == 1);
    CHECK(out.reason == "r");
    CHECK(out.llm_model == "m");
  }
  SUBCASE("|<1>| keeps them") {
    auto gw = scripted({R"({"Reason": "r", "Token": "|<1>|"})"});
    auto out = std::get<LabeledTriplet>(label_triplet(*gw, c, kTexts));
    CHECK(out.positive_id == 1);
    CHECK(out.negative_id == 2);
  }
  SUBCASE("Error is skipped as ambiguous without a re-prompt") {
    auto gw = scripted({"Error", R"({"Token": "|<1>|"})"});
    auto out = std::get<SkippedTriplet>(label_triplet(*gw, c, kTexts));
    CHECK(out.why == "ambiguous");
    CHECK(gw->ledger().per_stage.at("triplets").calls == 1);
  }
  SUBCASE("prose is re-prompted once") {
    auto gw = scripted({"The first one, clearly.", R"({"Token": "|<1>|"})"});
    CHECK(std::holds_alternative<LabeledTriplet>(label_triplet(*gw, c, kTexts)));
    CHECK(gw->ledger().per_stage.at("triplets").calls == 2);
  }
  SUBCASE("prose twice is skipped as parse") {
    auto gw = scripted({"The first one.", "Still the first one."});
    auto out = std::get<SkippedTriplet>(label_triplet(*gw, c, kTexts));
    CHECK(out.why == "parse");
    CHECK(out.candidate == c);
  }
}

TEST_CASE("label_all conserves candidates and planted topics agree") {
  auto corpus = std::make_shared<testing::SyntheticCorpus>(testing::make_synthetic(8, 12, 21));
  embedding::StubEmbeddingProvider stub(256);
  auto m = EmbeddingMatrix::from_vectors(stub.embed(corpus->paragraphs));
  auto cands = sample_triplet_candidates(m, 16, 400, 5);
  llm::Gateway gw(testing::oracle_provider(corpus, 1));
  auto result = label_all(gw, cands, corpus->paragraphs);
  CHECK(result.labeled.size() + result.skipped.size() == cands.size());
  REQUIRE(!result.labeled.empty());
  std::size_t right = 0;
  for (std::size_t i = 0; i < result.labeled.size(); ++i) {
    const auto& t = result.labeled[i];
    CHECK(t.positive_id != t.negative_id);
    CHECK(t.positive_id != t.anchor_id);
    if (corpus->topic_of_id(t.positive_id) == corpus->topic_of_id(t.anchor_id) &&
        corpus->topic_of_id(t.negative_id) != corpus->topic_of_id(t.anchor_id))
      ++right;
  }
  CHECK(static_cast<double>(right) >= 0.99 * static_cast<double>(result.labeled.size()));

  // Output order follows candidate order.
  std::size_t li = 0, si = 0;
  for (const auto& c : cands) {
    if (li < result.labeled.size() && result.labeled[li].anchor_id == c.anchor_id &&
        std::set<ParaId>{result.labeled[li].positive_id, result.labeled[li].negative_id} ==
            std::set<ParaId>{c.cand1_id, c.cand2_id})
      ++li;
    else if (si < result.skipped.size() && result.skipped[si].candidate == c)
      ++si;
  }
  CHECK(li == result.labeled.size());
  CHECK(si == result.skipped.size());
}

TEST_CASE("split and serialization") {
  std::vector<LabeledTriplet> ts;
  for (ParaId i = 0; i < 10; ++i) ts.push_back({i, i + 1, i + 2, "r" + std::to_string(i), "m"});
  auto [train, val] = split_triplets(ts, 0.3, 4);
  CHECK(val.size() == 3);
  CHECK(train.size() == 7);
  auto again = split_triplets(ts, 0.3, 4);
  CHECK(serialize_triplets(again.second) == serialize_triplets(val));

  std::vector<LabeledTriplet> two(ts.begin(), ts.begin() + 2);
  auto [t2, v2] = split_triplets(two, 0.3, 4);
  CHECK(t2.size() == 1);
  CHECK(v2.size() == 1);

  auto dir = testing::scratch("triplet_io");
  write_file(dir / "t.jsonl", serialize_triplets(ts));
  CHECK(serialize_triplets(load_triplets(dir / "t.jsonl")) == serialize_triplets(ts));
  std::vector<SkippedTriplet> sk{{{1, 2, 3}, "parse"}, {{4, 5, 6}, "ambiguous"}};
  write_file(dir / "s.jsonl", serialize_skipped(sk));
  auto back = load_skipped(dir / "s.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].candidate == TripletCandidate{4, 5, 6});
  CHECK(back[1].why == "ambiguous");
}
