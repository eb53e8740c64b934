#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lmar/embedding.hpp"
#include "lmar/io.hpp"
#include "lmar/rng.hpp"

namespace lmar::testing {

inline std::filesystem::path fixture_dir() { return LMAR_FIXTURE_DIR; }

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::path(LMAR_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<double> gaussian(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

/// n unit vectors around `centers` planted centres; noise scales the
/// per-point jitter relative to the unit-norm centre. centers == 0 gives
/// isotropic random points.
inline embedding::EmbeddingMatrix planted_matrix(std::size_t n, std::size_t d, std::size_t centers, double noise,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> c;
  for (std::size_t i = 0; i < centers; ++i) {
    auto v = gaussian(rng, d);
    double norm = embedding::l2_norm(v);
    for (auto& x : v) x /= norm;
    c.push_back(v);
  }
  std::vector<embedding::EmbeddingVector> rows;
  rows.reserve(n);
  const double jitter = noise / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto v = gaussian(rng, d);
    if (!c.empty()) {
      const auto& base = c[rng.uniform_index(c.size())];
      for (std::size_t j = 0; j < d; ++j) v[j] = base[j] + jitter * v[j];
    }
    rows.emplace_back(std::move(v));
  }
  return embedding::EmbeddingMatrix::from_vectors(rows);
}

}  // namespace lmar::testing
