#include <fstream>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "lmar/corpus.hpp"
#include "lmar/error.hpp"
#include "support.hpp"

using namespace lmar;
using namespace lmar::corpus;

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

std::vector<std::string> texts_of(const std::vector<Paragraph>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(p.text);
  return out;
}

}  // namespace

TEST_CASE("segment_document splits on blank lines") {
  auto ps = segment_document({"d", "", "A.\n\nB."});
  CHECK(texts_of(ps) == std::vector<std::string>{"A.", "B."});
  CHECK(ps[0].ordinal == 0);
  CHECK(ps[1].ordinal == 1);

  auto one = segment_document({"d", "", "single block"});
  REQUIRE(one.size() == 1);
  CHECK(one[0].ordinal == 0);
  CHECK(one[0].text == "single block");
}

TEST_CASE("whitespace-only middle block is dropped (seg.txt)") {
  Document doc{"seg", "", read_file(testing::fixture_dir() / "seg.txt")};
  auto ps = segment_document(doc);
  REQUIRE(ps.size() == 2);
  CHECK(ps[0].text == "First block of the fixture.");
  CHECK(ps[1].text == "Third block, after a whitespace-only block.");
  CHECK(ps[1].ordinal == 1);
}

TEST_CASE("segment_document rejects all-whitespace documents") {
  CHECK(code_of([] { segment_document({"d", "", " \n\t\n "}); }) == ErrorCode::EmptyDocument);
}

TEST_CASE("segmentation partitions the source text") {
  Rng rng(3);
  const char* pieces[] = {"alpha", "beta.", "gamma,", "\n", "\n\n", " ", "\n \n", "delta"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string text = "start";
    for (int i = 0; i < 40; ++i) text += pieces[rng.uniform_index(8)];
    auto ps = segment_document({"d", "", text});
    // Non-whitespace characters appear exactly once, in order.
    std::string src, joined;
    for (char c : text)
      if (!std::isspace(static_cast<unsigned char>(c))) src += c;
    for (const auto& p : ps) {
      CHECK(!p.text.empty());
      for (char c : p.text)
        if (!std::isspace(static_cast<unsigned char>(c))) joined += c;
    }
    CHECK(src == joined);
  }
}

TEST_CASE("over-long blocks are hard-wrapped at token boundaries") {
  std::string text;
  for (int i = 0; i < 25; ++i) text += "word" + std::to_string(i) + " ";
  auto ps = segment_document({"d", "", text}, SegmentationRules{10});
  REQUIRE(ps.size() == 3);
  CHECK(ps[0].token_count == 10);
  CHECK(ps[1].token_count == 10);
  CHECK(ps[2].token_count == 5);
  CHECK(ps[1].text.rfind("word10", 0) == 0);
}

TEST_CASE("count_tokens rule") {
  CHECK(count_tokens("") == 0);
  CHECK(count_tokens("hello world") == 2);
  CHECK(count_tokens("don't stop") == 3);
  CHECK(tokenize("don't stop") == std::vector<std::string>{"don", "'t", "stop"});
  CHECK(tokenize("Hello, World!") == std::vector<std::string>{"Hello", ",", "World", "!"});
  CHECK(tokenize("Hello", true) == std::vector<std::string>{"hello"});
  CHECK(count_tokens("x") >= 1);
  CHECK(count_tokens("caf\xc3\xa9 au lait") == 3);
}

TEST_CASE("load_corpus assigns dense ids in doc_id order") {
  auto dir = testing::scratch("corpus_two_docs");
  write_file(dir / "b.txt", "B one.\n\nB two.\n");
  write_file(dir / "a.txt", "A one.\n\nA two.\n");
  auto store = load_corpus(dir);
  REQUIRE(store.size() == 4);
  for (ParaId i = 0; i < 4; ++i) CHECK(store.at(i).para_id == i);
  CHECK(store.text(0) == "A one.");
  CHECK(store.text(3) == "B two.");
  CHECK(store.doc_index().at("b").begin == 2);
}

TEST_CASE("load_corpus errors") {
  auto empty = testing::scratch("corpus_empty");
  CHECK(code_of([&] { load_corpus(empty); }) == ErrorCode::EmptyCorpus);
  CHECK(code_of([&] { load_corpus(empty / "missing"); }) == ErrorCode::IoError);

  auto dup = testing::scratch("corpus_dup");
  write_file(dup / "docs.jsonl", "{\"doc_id\": \"x\", \"text\": \"one\"}\n{\"doc_id\": \"x\", \"text\": \"two\"}\n");
  CHECK(code_of([&] { load_corpus(dup); }) == ErrorCode::DuplicateDocId);

  auto bad = testing::scratch("corpus_bad");
  write_file(bad / "docs.jsonl", "{\"doc_id\": \"x\", \"text\": \"one\"}\n{not json\n");
  try {
    load_corpus(bad);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("fixture corpus token total equals brute-force sum") {
  auto store = load_corpus(testing::fixture_dir() / "corpus50");
  CHECK(store.size() == 50);
  std::size_t sum = 0;
  for (const auto& entry : std::filesystem::directory_iterator(testing::fixture_dir() / "corpus50")) {
    std::ifstream f(entry.path());
    std::string line;
    while (std::getline(f, line)) {
      std::istringstream is(line);
      for (std::string w; is >> w;) {
        // Independent count: split each word into alnum / non-alnum runs.
        int runs = 0;
        int prev = -1;
        for (unsigned char c : w) {
          int cls = std::isalnum(c) || c >= 0x80 ? 1 : 0;
          if (cls != prev) ++runs;
          prev = cls;
        }
        sum += runs;
      }
    }
  }
  CHECK(store.total_document_tokens() == sum);
}

TEST_CASE("store round-trips byte-identically and loads are stable") {
  auto store = load_corpus(testing::fixture_dir() / "corpus50");
  auto dir = testing::scratch("corpus_roundtrip");
  save_store(store, dir / "corpus.store.jsonl");
  auto again = load_store(dir / "corpus.store.jsonl");
  CHECK(serialize_store(again) == read_file(dir / "corpus.store.jsonl"));
  CHECK(serialize_store(load_corpus(testing::fixture_dir() / "corpus50")) == serialize_store(store));
  CHECK(again.total_document_tokens() == store.total_document_tokens());
}

TEST_CASE("load_store rejects gaps in the id range") {
  auto dir = testing::scratch("corpus_gap");
  write_file(dir / "s.jsonl",
             "{\"n\":2,\"total_document_tokens\":2,\"format_version\":1}\n"
             "{\"para_id\":0,\"doc_id\":\"a\",\"ordinal\":0,\"text\":\"x\",\"token_count\":1}\n"
             "{\"para_id\":2,\"doc_id\":\"a\",\"ordinal\":1,\"text\":\"y\",\"token_count\":1}\n");
  CHECK(code_of([&] { load_store(dir / "s.jsonl"); }) == ErrorCode::MalformedRecord);
}
