#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lmar {

/// Dense, corpus-global paragraph id (0..n-1).
using ParaId = std::uint32_t;

namespace corpus {

struct Document {
  std::string doc_id;
  std::string source;
  std::string text;
};

struct Paragraph {
  ParaId para_id = 0;
  std::string doc_id;
  std::uint32_t ordinal = 0;
  std::string text;
  std::size_t token_count = 0;
};

struct SegmentationRules {
  /// Blocks longer than this many tokens are hard-wrapped at token boundaries.
  std::size_t max_tokens = 2048;
};

/// Byte range [begin, end) of one token inside the tokenized text.
struct TokenSpan {
  std::size_t begin;
  std::size_t end;
};

// Tokenizer: whitespace separates tokens; inside a word, runs of letters or
// digits (any byte >= 0x80 counts as a letter) are split from runs of other
// characters. An apostrophe directly followed by a letter/digit run starts a
// clitic token ("don't" -> "don", "'t").
std::vector<TokenSpan> tokenize_spans(std::string_view text);
std::vector<std::string> tokenize(std::string_view text, bool lowercase = false);
std::size_t count_tokens(std::string_view text);

/// Splits on one or more blank lines. Paragraph ids are left at 0; ordinals
/// are 0..m-1 within the document.
std::vector<Paragraph> segment_document(const Document& doc, const SegmentationRules& rules = {});

struct IdRange {
  ParaId begin;
  ParaId end;  // exclusive
};

/// Immutable after construction; safe to share read-only.
class CorpusStore {
 public:
  CorpusStore() = default;

  /// Sorts documents by doc_id and assigns dense para ids.
  static CorpusStore from_documents(std::vector<Document> docs, const SegmentationRules& rules = {});
  /// Rebuilds from already-segmented paragraphs; validates the id contract.
  static CorpusStore from_paragraphs(std::vector<Paragraph> paragraphs);

  std::size_t size() const noexcept { return paragraphs_.size(); }
  bool empty() const noexcept { return paragraphs_.empty(); }
  const Paragraph& at(ParaId id) const { return paragraphs_.at(id); }
  const std::string& text(ParaId id) const { return paragraphs_.at(id).text; }
  const std::vector<Paragraph>& paragraphs() const noexcept { return paragraphs_; }
  const std::map<std::string, IdRange>& doc_index() const noexcept { return doc_index_; }
  std::size_t total_document_tokens() const noexcept { return total_document_tokens_; }

  std::vector<std::string> texts() const;

 private:
  std::vector<Paragraph> paragraphs_;
  std::map<std::string, IdRange> doc_index_;
  std::size_t total_document_tokens_ = 0;
};

/// Accepts a directory of .txt files (doc_id = stem) and/or .jsonl files of
/// {"doc_id", "text"}, or a single such file.
CorpusStore load_corpus(const std::filesystem::path& path, const SegmentationRules& rules = {});

/// corpus.store.jsonl: header {"n", "total_document_tokens", "format_version"}
/// then one paragraph record per line.
std::string serialize_store(const CorpusStore& store);
void save_store(const CorpusStore& store, const std::filesystem::path& path);
CorpusStore load_store(const std::filesystem::path& path);

}  // namespace corpus
}  // namespace lmar
