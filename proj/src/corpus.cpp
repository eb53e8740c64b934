#include "lmar/corpus.hpp"

#include <algorithm>
#include <set>

#include "lmar/error.hpp"
#include "lmar/io.hpp"

namespace lmar::corpus {
namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

// Hard-wraps one block into chunks of at most max_tokens tokens.
void emit_block(std::string_view block, const SegmentationRules& rules, const std::string& doc_id,
                std::vector<Paragraph>& out) {
  auto spans = tokenize_spans(block);
  std::size_t cap = std::max<std::size_t>(rules.max_tokens, 1);
  for (std::size_t first = 0; first < spans.size(); first += cap) {
    std::size_t last = std::min(spans.size(), first + cap) - 1;
    Paragraph p;
    p.doc_id = doc_id;
    p.ordinal = static_cast<std::uint32_t>(out.size());
    p.text = std::string(block.substr(spans[first].begin, spans[last].end - spans[first].begin));
    p.token_count = last - first + 1;
    out.push_back(std::move(p));
  }
}

}  // namespace

std::vector<TokenSpan> tokenize_spans(std::string_view text) {
  std::vector<TokenSpan> spans;
  std::size_t i = 0, n = text.size();
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    if (is_space(at(i))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (is_word(at(i)) || (at(i) == '\'' && i + 1 < n && is_word(at(i + 1)))) {
      ++i;
      while (i < n && is_word(at(i))) ++i;
    } else {
      ++i;
      while (i < n && !is_space(at(i)) && !is_word(at(i)) &&
             !(at(i) == '\'' && i + 1 < n && is_word(at(i + 1))))
        ++i;
    }
    spans.push_back({start, i});
  }
  return spans;
}

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> tokens;
  for (auto [b, e] : tokenize_spans(text)) {
    std::string tok(text.substr(b, e - b));
    if (lowercase)
      for (auto& c : tok)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

std::size_t count_tokens(std::string_view text) { return tokenize_spans(text).size(); }

std::vector<Paragraph> segment_document(const Document& doc, const SegmentationRules& rules) {
  std::string_view text = doc.text;
  if (is_blank(text)) throw Error(ErrorCode::EmptyDocument, "document '" + doc.doc_id + "' is empty");

  std::vector<Paragraph> out;
  std::size_t pos = 0;
  std::size_t block_start = std::string_view::npos;
  std::size_t block_end = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(pos, line_end - pos);
    if (is_blank(line)) {
      if (block_start != std::string_view::npos) {
        emit_block(trim(text.substr(block_start, block_end - block_start)), rules, doc.doc_id, out);
        block_start = std::string_view::npos;
      }
    } else {
      if (block_start == std::string_view::npos) block_start = pos;
      block_end = line_end;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (block_start != std::string_view::npos)
    emit_block(trim(text.substr(block_start, block_end - block_start)), rules, doc.doc_id, out);
  return out;
}

CorpusStore CorpusStore::from_documents(std::vector<Document> docs, const SegmentationRules& rules) {
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "no documents");
  std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  for (std::size_t i = 1; i < docs.size(); ++i)
    if (docs[i].doc_id == docs[i - 1].doc_id)
      throw Error(ErrorCode::DuplicateDocId, "doc_id '" + docs[i].doc_id + "' appears twice");

  std::vector<Paragraph> paragraphs;
  for (const auto& doc : docs) {
    for (auto& p : segment_document(doc, rules)) {
      p.para_id = static_cast<ParaId>(paragraphs.size());
      paragraphs.push_back(std::move(p));
    }
  }
  return from_paragraphs(std::move(paragraphs));
}

CorpusStore CorpusStore::from_paragraphs(std::vector<Paragraph> paragraphs) {
  if (paragraphs.empty()) throw Error(ErrorCode::EmptyCorpus, "no paragraphs");
  CorpusStore store;
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    const auto& p = paragraphs[i];
    if (p.para_id != i)
      throw Error(ErrorCode::MalformedRecord, "para_id " + std::to_string(p.para_id) + " at position " +
                                                  std::to_string(i) + " breaks the dense id range");
    if (p.text.empty() || p.token_count == 0)
      throw Error(ErrorCode::MalformedRecord, "paragraph " + std::to_string(i) + " is empty");
    auto [it, inserted] = store.doc_index_.try_emplace(p.doc_id, IdRange{p.para_id, p.para_id + 1});
    if (!inserted) {
      if (it->second.end != p.para_id || paragraphs[i - 1].ordinal >= p.ordinal)
        throw Error(ErrorCode::MalformedRecord, "paragraphs of '" + p.doc_id + "' are not contiguous");
      it->second.end = p.para_id + 1;
    }
    store.total_document_tokens_ += p.token_count;
  }
  store.paragraphs_ = std::move(paragraphs);
  return store;
}

std::vector<std::string> CorpusStore::texts() const {
  std::vector<std::string> out;
  out.reserve(paragraphs_.size());
  for (const auto& p : paragraphs_) out.push_back(p.text);
  return out;
}

namespace {

void read_jsonl_docs(const std::filesystem::path& file, std::vector<Document>& docs) {
  for_each_jsonl(file, [&](std::size_t line, const Json& rec) {
    if (!rec.is_object() || !rec.contains("doc_id") || !rec.contains("text") || !rec["doc_id"].is_string() ||
        !rec["text"].is_string())
      throw Error(ErrorCode::MalformedRecord, file.filename().string() + " line " + std::to_string(line) +
                                                  ": expected {\"doc_id\": str, \"text\": str}");
    docs.push_back({rec["doc_id"].get<std::string>(), file.string() + ":" + std::to_string(line),
                    rec["text"].get<std::string>()});
  });
}

}  // namespace

CorpusStore load_corpus(const std::filesystem::path& path, const SegmentationRules& rules) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Error(ErrorCode::IoError, "corpus path does not exist: " + path.string());

  std::vector<Document> docs;
  auto add_file = [&](const fs::path& file) {
    if (file.extension() == ".jsonl")
      read_jsonl_docs(file, docs);
    else if (file.extension() == ".txt")
      docs.push_back({file.stem().string(), file.string(), read_file(file)});
  };

  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_file(f);
  } else {
    add_file(path);
  }
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "no .txt or .jsonl documents under " + path.string());
  return CorpusStore::from_documents(std::move(docs), rules);
}

std::string serialize_store(const CorpusStore& store) {
  std::string out;
  Json header;
  header["n"] = store.size();
  header["total_document_tokens"] = store.total_document_tokens();
  header["format_version"] = 1;
  out += to_jsonl_line(header);
  for (const auto& p : store.paragraphs()) {
    Json rec;
    rec["para_id"] = p.para_id;
    rec["doc_id"] = p.doc_id;
    rec["ordinal"] = p.ordinal;
    rec["text"] = p.text;
    rec["token_count"] = p.token_count;
    out += to_jsonl_line(rec);
  }
  return out;
}

void save_store(const CorpusStore& store, const std::filesystem::path& path) {
  write_file(path, serialize_store(store));
}

CorpusStore load_store(const std::filesystem::path& path) {
  std::vector<Paragraph> paragraphs;
  std::size_t expected_n = 0, expected_tokens = 0;
  bool have_header = false;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      if (!have_header) {
        if (rec.at("format_version").get<int>() != 1)
          throw Error(ErrorCode::MalformedRecord, "unsupported store format_version");
        expected_n = rec.at("n").get<std::size_t>();
        expected_tokens = rec.at("total_document_tokens").get<std::size_t>();
        have_header = true;
        return;
      }
      Paragraph p;
      p.para_id = rec.at("para_id").get<ParaId>();
      p.doc_id = rec.at("doc_id").get<std::string>();
      p.ordinal = rec.at("ordinal").get<std::uint32_t>();
      p.text = rec.at("text").get<std::string>();
      p.token_count = rec.at("token_count").get<std::size_t>();
      paragraphs.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  });
  if (!have_header) throw Error(ErrorCode::MalformedRecord, "store has no header: " + path.string());
  auto store = CorpusStore::from_paragraphs(std::move(paragraphs));
  if (store.size() != expected_n || store.total_document_tokens() != expected_tokens)
    throw Error(ErrorCode::MalformedRecord, "store header disagrees with its records");
  return store;
}

}  // namespace lmar::corpus
