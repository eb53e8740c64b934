#include "lmar/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lmar/error.hpp"
#include "lmar/parallel.hpp"
#include "lmar/simd.hpp"

namespace lmar::embedding {

double l2_norm(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

EmbeddingVector normalize(const EmbeddingVector& v) {
  double norm = l2_norm(v.view());
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  EmbeddingVector out(v.components, true);
  for (auto& x : out.components) x /= norm;
  return out;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::DimMismatch, "cosine of dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  double na = l2_norm(a.view());
  double nb = l2_norm(b.view());
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::ZeroVector, "cosine with a zero vector");
  return std::clamp(simd::dot(a.view(), b.view()) / (na * nb), -1.0, 1.0);
}

EmbeddingMatrix EmbeddingMatrix::from_vectors(std::span<const EmbeddingVector> vectors, std::vector<ParaId> row_ids) {
  std::size_t n = vectors.size();
  std::size_t d = n == 0 ? 0 : vectors.front().dim();
  if (row_ids.empty()) {
    row_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) row_ids[i] = static_cast<ParaId>(i);
  }
  std::vector<float> rows(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].dim() != d) throw Error(ErrorCode::DimMismatch, "row " + std::to_string(i) + " has a different dim");
    auto unit = normalize(vectors[i]);
    for (std::size_t j = 0; j < d; ++j) rows[i * d + j] = static_cast<float>(unit.components[j]);
  }
  return from_storage(n, d, std::move(rows), std::move(row_ids));
}

EmbeddingMatrix EmbeddingMatrix::from_storage(std::size_t n, std::size_t d, std::vector<float> rows,
                                              std::vector<ParaId> row_ids) {
  if (rows.size() != n * d || row_ids.size() != n)
    throw Error(ErrorCode::DimMismatch, "matrix storage does not match n x d");
  EmbeddingMatrix m;
  m.d_ = d;
  m.rows_ = std::move(rows);
  m.row_ids_ = std::move(row_ids);
  ParaId max_id = 0;
  for (auto id : m.row_ids_) max_id = std::max(max_id, id);
  m.id_to_pos_.assign(n == 0 ? 0 : std::size_t{max_id} + 1, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (m.id_to_pos_[m.row_ids_[i]] != n)
      throw Error(ErrorCode::InvalidArgument, "row id " + std::to_string(m.row_ids_[i]) + " repeated");
    m.id_to_pos_[m.row_ids_[i]] = i;
  }
  return m;
}

EmbeddingVector EmbeddingMatrix::row_vector(std::size_t i) const {
  auto r = row(i);
  return EmbeddingVector(std::vector<double>(r.begin(), r.end()), true);
}

std::size_t EmbeddingMatrix::position_of(ParaId id) const {
  return id < id_to_pos_.size() ? id_to_pos_[id] : n();
}

EmbeddingMatrix EmbeddingMatrix::subset(std::span<const std::size_t> positions) const {
  std::vector<float> rows;
  rows.reserve(positions.size() * d_);
  std::vector<ParaId> ids;
  ids.reserve(positions.size());
  for (auto p : positions) {
    auto r = row(p);
    rows.insert(rows.end(), r.begin(), r.end());
    ids.push_back(row_ids_[p]);
  }
  return from_storage(positions.size(), d_, std::move(rows), std::move(ids));
}

std::vector<Hit> top_k(const EmbeddingVector& query, const EmbeddingMatrix& index, std::size_t k,
                       std::span<const ParaId> exclude) {
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "top_k over an empty index");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (query.dim() != index.d())
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.dim()) + " vs index dim " +
                                            std::to_string(index.d()));
  auto q = normalize(query);
  std::vector<char> skip(index.n(), 0);
  for (auto id : exclude)
    if (auto pos = index.position_of(id); pos < index.n()) skip[pos] = 1;

  std::vector<Hit> hits(index.n());
  parallel_for(index.n(), 4096, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      hits[i] = {index.row_id(i), std::clamp(simd::dot(index.row(i), q.view()), -1.0, 1.0)};
  });
  std::size_t kept = 0;
  for (std::size_t i = 0; i < hits.size(); ++i)
    if (!skip[i]) hits[kept++] = hits[i];
  hits.resize(kept);

  auto before = [](const Hit& a, const Hit& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  };
  std::size_t take = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), before);
  hits.resize(take);
  return hits;
}

namespace {

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

EmbeddingVector StubEmbeddingProvider::embed_one(const std::string& text) const {
  // Lowercase, collapse whitespace runs, pad with one space on each side.
  std::string norm = " ";
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (norm.back() != ' ') norm.push_back(' ');
    } else {
      norm.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
    }
  }
  if (norm.back() != ' ') norm.push_back(' ');

  std::vector<double> v(dim_, 0.0);
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) {
    std::uint64_t h = fnv1a(norm.data() + i, 3);
    v[h % dim_] += ((h >> 32) & 1) ? -1.0 : 1.0;
  }
  EmbeddingVector out(std::move(v));
  if (!(l2_norm(out.view()) > 0.0)) {
    // Every trigram cancelled out; fall back to a fixed direction.
    out.components.assign(dim_, 0.0);
    out.components[0] = 1.0;
  }
  return normalize(out);
}

std::vector<EmbeddingVector> StubEmbeddingProvider::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

std::string StubEmbeddingProvider::fingerprint() const {
  return "stub:trigram-hash-v1:d=" + std::to_string(dim_);
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(ProviderConfig config) : config_(std::move(config)) {
  if (config_.api_key_env.empty()) config_.api_key_env = "LMAR_EMBED_API_KEY";
  config_.validate();
}

std::vector<EmbeddingVector> RemoteEmbeddingProvider::embed(std::span<const std::string> texts) {
  std::size_t batches = (texts.size() + config_.batch_size - 1) / config_.batch_size;
  std::vector<std::vector<EmbeddingVector>> results(batches);
  std::vector<std::exception_ptr> errors(batches);

  auto run_batch = [&](std::size_t b) {
    try {
      std::size_t begin = b * config_.batch_size;
      std::size_t end = std::min(texts.size(), begin + config_.batch_size);
      Json req;
      req["model"] = config_.model_name;
      req["input"] = Json::array();
      for (std::size_t i = begin; i < end; ++i) req["input"].push_back(texts[i]);
      Json resp = post_json_with_retry(config_, "/embeddings", req);
      const auto& data = resp.at("data");
      std::vector<EmbeddingVector> batch(end - begin);
      std::vector<char> seen(end - begin, 0);
      for (const auto& item : data) {
        auto idx = item.at("index").get<std::size_t>();
        if (idx >= batch.size() || seen[idx])
          throw Error(ErrorCode::ProviderUnavailable, "embedding response has a bad or repeated index");
        seen[idx] = 1;
        batch[idx] = EmbeddingVector(item.at("embedding").get<std::vector<double>>());
      }
      if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw Error(ErrorCode::ProviderUnavailable, "embedding response is missing rows");
      results[b] = std::move(batch);
    } catch (const Json::exception& e) {
      errors[b] = std::make_exception_ptr(
          Error(ErrorCode::ProviderUnavailable, std::string("malformed embedding response: ") + e.what()));
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };

  // Bounded parallelism: waves of at most max_parallel batches.
  for (std::size_t wave = 0; wave < batches; wave += config_.max_parallel) {
    std::size_t wave_end = std::min(batches, wave + config_.max_parallel);
    std::vector<std::jthread> inflight;
    for (std::size_t b = wave + 1; b < wave_end; ++b) inflight.emplace_back(run_batch, b);
    run_batch(wave);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (auto& batch : results)
    for (auto& v : batch) out.push_back(std::move(v));
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  config.validate();
  switch (config.kind) {
    case ProviderKind::Stub: return std::make_unique<StubEmbeddingProvider>(config.dim);
    case ProviderKind::Remote: return std::make_unique<RemoteEmbeddingProvider>(config);
    case ProviderKind::Mock: break;
  }
  throw Error(ErrorCode::ConfigError, "embedding provider must be 'stub' or 'remote'");
}

std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "embed_batch needs at least one text");
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (texts[i].empty()) throw Error(ErrorCode::InvalidArgument, "text " + std::to_string(i) + " is empty");
  auto out = provider.embed(texts);
  if (out.size() != texts.size())
    throw Error(ErrorCode::ProviderUnavailable, "provider returned " + std::to_string(out.size()) + " vectors for " +
                                                    std::to_string(texts.size()) + " texts");
  for (const auto& v : out)
    if (v.dim() != out.front().dim() || v.dim() == 0)
      throw Error(ErrorCode::DimMismatch, "provider returned inconsistent embedding dims");
  return out;
}

std::vector<EmbeddingVector> embed_batch(const ProviderConfig& config, std::span<const std::string> texts) {
  auto provider = make_provider(config);
  return embed_batch(*provider, texts);
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{static_cast<unsigned char>(in[offset + i])} << (8 * i);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

std::filesystem::path sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

}  // namespace

void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path, const std::string& fingerprint) {
  std::string out = "LMAR";
  out.reserve(16 + m.storage().size() * 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.n()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.d()));
  for (float x : m.storage()) put_le<float>(out, x);
  write_file(path, out);

  Json side;
  side["row_ids"] = m.row_ids();
  side["provider_fingerprint"] = fingerprint;
  write_file(sidecar(path), side.dump(2) + "\n");
}

LoadedMatrix load_matrix(const std::filesystem::path& path) {
  std::string bin = read_file(path);
  if (bin.size() < 16 || bin.compare(0, 4, "LMAR") != 0)
    throw Error(ErrorCode::MalformedRecord, path.string() + " is not an LMAR embedding file");
  if (get_le<std::uint32_t>(bin, 4) != 1) throw Error(ErrorCode::MalformedRecord, "unsupported embedding file version");
  std::size_t n = get_le<std::uint32_t>(bin, 8);
  std::size_t d = get_le<std::uint32_t>(bin, 12);
  if (bin.size() != 16 + n * d * 4) throw Error(ErrorCode::MalformedRecord, path.string() + " has the wrong size");
  std::vector<float> rows(n * d);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = get_le<float>(bin, 16 + 4 * i);

  Json side = Json::parse(read_file(sidecar(path)), nullptr, false);
  if (side.is_discarded() || !side.contains("row_ids"))
    throw Error(ErrorCode::MalformedRecord, sidecar(path).string() + " is not a valid sidecar");
  LoadedMatrix out;
  out.matrix = EmbeddingMatrix::from_storage(n, d, std::move(rows), side["row_ids"].get<std::vector<ParaId>>());
  out.fingerprint = side.value("provider_fingerprint", "");
  return out;
}

}  // namespace lmar::embedding
