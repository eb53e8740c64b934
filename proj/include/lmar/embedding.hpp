#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lmar/corpus.hpp"
#include "lmar/provider.hpp"

namespace lmar::embedding {

/// Tolerance on ||v|| - 1 for vectors flagged unit.
inline constexpr double kUnitTolerance = 1e-6;

struct EmbeddingVector {
  std::vector<double> components;
  bool is_unit = false;

  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> c, bool unit = false) : components(std::move(c)), is_unit(unit) {}

  std::size_t dim() const noexcept { return components.size(); }
  std::span<const double> view() const noexcept { return components; }
};

EmbeddingVector normalize(const EmbeddingVector& v);
double l2_norm(std::span<const double> v);

/// Cosine in [-1, 1]; clamped against rounding. Throws DimMismatch / ZeroVector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// Row-aligned unit-norm vectors. Rows are stored as f32; every similarity is
/// accumulated in f64.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Normalizes each vector (ZeroVector on a zero row). row_ids defaults to 0..n-1.
  static EmbeddingMatrix from_vectors(std::span<const EmbeddingVector> vectors, std::vector<ParaId> row_ids = {});
  /// Adopts already-normalized f32 rows without touching their bits.
  static EmbeddingMatrix from_storage(std::size_t n, std::size_t d, std::vector<float> rows, std::vector<ParaId> row_ids);

  std::size_t n() const noexcept { return row_ids_.size(); }
  std::size_t d() const noexcept { return d_; }
  bool empty() const noexcept { return row_ids_.empty(); }

  std::span<const float> row(std::size_t i) const { return {rows_.data() + i * d_, d_}; }
  EmbeddingVector row_vector(std::size_t i) const;
  ParaId row_id(std::size_t i) const { return row_ids_[i]; }
  const std::vector<ParaId>& row_ids() const noexcept { return row_ids_; }
  const std::vector<float>& storage() const noexcept { return rows_; }

  /// Position of a para id, or n() when absent.
  std::size_t position_of(ParaId id) const;

  /// Restriction to the given row positions (in the given order).
  EmbeddingMatrix subset(std::span<const std::size_t> positions) const;

 private:
  std::size_t d_ = 0;
  std::vector<float> rows_;
  std::vector<ParaId> row_ids_;
  std::vector<std::size_t> id_to_pos_;  // indexed by para id; n() marks absent
};

struct Hit {
  ParaId id;
  double similarity;
};

/// Exact cosine top-k. Descending similarity, ties by ascending id; excluded
/// ids never appear. Result length is min(k, n - |exclude ∩ ids|).
std::vector<Hit> top_k(const EmbeddingVector& query, const EmbeddingMatrix& index, std::size_t k,
                       std::span<const ParaId> exclude = {});

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// One vector per input text, uniform dim, not necessarily normalized.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
  virtual std::string fingerprint() const = 0;
};

/// Signed feature hashing of lowercase character trigrams into `dim` buckets,
/// then l2 normalization. Bit-deterministic given the text.
class StubEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(std::size_t dim) : dim_(dim) {}
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  EmbeddingVector embed_one(const std::string& text) const;
  std::string fingerprint() const override;

 private:
  std::size_t dim_;
};

/// POST {base_url}/embeddings {"model", "input"}; batches run with bounded
/// parallelism and are reassembled by "index".
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(ProviderConfig config);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::string fingerprint() const override { return config_.fingerprint(); }

 private:
  ProviderConfig config_;
};

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

/// Validates inputs (non-empty list, non-empty texts) and embeds via `config`.
std::vector<EmbeddingVector> embed_batch(const ProviderConfig& config, std::span<const std::string> texts);
std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts);

/// Binary: "LMAR", u32 version=1, u32 n, u32 d, n*d little-endian f32.
/// Sidecar `<path>.json`: {"row_ids", "provider_fingerprint"}.
void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path, const std::string& fingerprint);
struct LoadedMatrix {
  EmbeddingMatrix matrix;
  std::string fingerprint;
};
LoadedMatrix load_matrix(const std::filesystem::path& path);

}  // namespace lmar::embedding
