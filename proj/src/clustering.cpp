#include "lmar/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lmar/error.hpp"
#include "lmar/io.hpp"
#include "lmar/parallel.hpp"
#include "lmar/rng.hpp"
#include "lmar/simd.hpp"

namespace lmar::clustering {

void ClusterParams::validate() const {
  if (k < 1) throw Error(ErrorCode::ConfigError, "cluster k must be >= 1");
  if (!(delta >= -1.0 && delta < 1.0))
    throw Error(ErrorCode::ConfigError, "cluster delta must lie in [-1, 1), got " + std::to_string(delta));
}

std::vector<Cluster> sample_knn_cluster(const embedding::EmbeddingMatrix& index, const ClusterParams& params) {
  params.validate();
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "cannot cluster an empty index");

  const std::size_t n = index.n();
  const std::size_t d = index.d();
  Rng rng(params.rng_seed);

  std::vector<std::size_t> available(n);
  for (std::size_t i = 0; i < n; ++i) available[i] = i;
  std::vector<char> taken(n, 0);

  struct Candidate {
    std::size_t pos;
    double sim;
  };
  std::vector<double> sims(n);
  std::vector<Candidate> above;
  std::vector<double> seed_vec(d);
  std::vector<Cluster> clusters;

  while (!available.empty()) {
    const std::size_t m = available.size();
    const std::size_t seed_pos = available[rng.uniform_index(m)];
    auto seed_row = index.row(seed_pos);
    std::copy(seed_row.begin(), seed_row.end(), seed_vec.begin());

    parallel_for(m, 8192, [&](std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j)
        sims[j] = std::clamp(simd::dot(index.row(available[j]), std::span<const double>(seed_vec)), -1.0, 1.0);
    });

    above.clear();
    for (std::size_t j = 0; j < m; ++j)
      if (available[j] != seed_pos && sims[j] > params.delta) above.push_back({available[j], sims[j]});

    auto before = [&](const Candidate& a, const Candidate& b) {
      return a.sim != b.sim ? a.sim > b.sim : index.row_id(a.pos) < index.row_id(b.pos);
    };
    std::size_t take = std::min(params.k - 1, above.size());
    std::partial_sort(above.begin(), above.begin() + static_cast<std::ptrdiff_t>(take), above.end(), before);

    Cluster c;
    c.seed_id = index.row_id(seed_pos);
    c.member_ids.push_back(c.seed_id);
    c.similarities.push_back(1.0);
    taken[seed_pos] = 1;
    for (std::size_t t = 0; t < take; ++t) {
      c.member_ids.push_back(index.row_id(above[t].pos));
      c.similarities.push_back(above[t].sim);
      taken[above[t].pos] = 1;
    }
    clusters.push_back(std::move(c));
    std::erase_if(available, [&](std::size_t p) { return taken[p] != 0; });
  }
  return clusters;
}

PartitionReport validate_partition(std::span<const Cluster> clusters, std::span<const ParaId> expected_ids,
                                   const ClusterParams& params) {
  PartitionReport report;
  ParaId max_id = 0;
  for (auto id : expected_ids) max_id = std::max(max_id, id);
  std::vector<char> expected(expected_ids.empty() ? 0 : std::size_t{max_id} + 1, 0);
  for (auto id : expected_ids) expected[id] = 1;
  std::vector<std::uint32_t> seen(expected.size(), 0);

  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    const auto& c = clusters[ci];
    if (c.member_ids.empty() || c.member_ids.size() != c.similarities.size() || c.member_ids.front() != c.seed_id) {
      report.malformed_clusters.push_back(ci);
      continue;
    }
    if (c.member_ids.size() > params.k) report.oversize_clusters.push_back(ci);
    for (std::size_t m = 0; m < c.member_ids.size(); ++m) {
      ParaId id = c.member_ids[m];
      if (id >= expected.size() || !expected[id]) {
        report.unknown.push_back(id);
        continue;
      }
      if (++seen[id] == 2) report.duplicated.push_back(id);
      if (m > 0 && !(c.similarities[m] > params.delta)) report.sub_threshold.push_back({ci, id, c.similarities[m]});
    }
  }
  for (auto id : expected_ids)
    if (seen[id] == 0) report.missing.push_back(id);
  std::sort(report.duplicated.begin(), report.duplicated.end());
  std::sort(report.missing.begin(), report.missing.end());
  return report;
}

PartitionReport validate_partition(std::span<const Cluster> clusters, std::size_t n, const ClusterParams& params) {
  std::vector<ParaId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<ParaId>(i);
  return validate_partition(clusters, ids, params);
}

double mean_intra_cluster_similarity(std::span<const Cluster> clusters) {
  double total = 0.0;
  std::size_t points = 0;
  for (const auto& c : clusters) {
    points += c.member_ids.size();
    for (std::size_t m = 1; m < c.similarities.size(); ++m) total += c.similarities[m];
  }
  return points == 0 ? 0.0 : total / static_cast<double>(points);
}

std::vector<ClusterParams> default_grid(std::uint64_t rng_seed) {
  std::vector<ClusterParams> grid;
  for (std::size_t k : {4, 8, 16})
    for (double delta : {0.3, 0.5, 0.7}) grid.push_back({k, delta, rng_seed});
  return grid;
}

GridSearchResult grid_search_params(const embedding::EmbeddingMatrix& index, std::span<const ClusterParams> grid,
                                    const ObjectiveSpec& objective) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "grid search needs at least one cell");
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "grid search over an empty index");

  const embedding::EmbeddingMatrix* sample = &index;
  embedding::EmbeddingMatrix subset;
  if (objective.sample_fraction < 1.0) {
    auto size = static_cast<std::size_t>(std::llround(objective.sample_fraction * static_cast<double>(index.n())));
    size = std::clamp<std::size_t>(size, 1, index.n());
    std::vector<std::size_t> positions(index.n());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    Rng rng(objective.rng_seed);
    // Partial Fisher-Yates: the first `size` slots become the sample.
    for (std::size_t i = 0; i < size; ++i) std::swap(positions[i], positions[i + rng.uniform_index(index.n() - i)]);
    positions.resize(size);
    std::sort(positions.begin(), positions.end());
    subset = index.subset(positions);
    sample = &subset;
  }

  GridSearchResult result;
  result.cells.resize(grid.size());
  parallel_for(grid.size(), 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto& cell = result.cells[i];
      cell.params = grid[i];
      try {
        auto clusters = sample_knn_cluster(*sample, grid[i]);
        cell.objective = objective.score ? objective.score(clusters) : mean_intra_cluster_similarity(clusters);
        if (!std::isfinite(*cell.objective)) {
          cell.objective.reset();
          cell.error = "objective is not finite";
        }
      } catch (const std::exception& ex) {
        cell.error = ex.what();
      }
    }
  });

  const GridCell* best = nullptr;
  for (const auto& cell : result.cells) {
    if (!cell.objective) continue;
    if (!best || *cell.objective > *best->objective ||
        (*cell.objective == *best->objective &&
         (cell.params.k < best->params.k ||
          (cell.params.k == best->params.k && cell.params.delta > best->params.delta))))
      best = &cell;
  }
  if (!best) throw Error(ErrorCode::InvalidArgument, "every grid cell failed: " + result.cells.front().error);
  result.best = best->params;
  return result;
}

std::string serialize_clusters(std::span<const Cluster> clusters) {
  std::string out;
  for (const auto& c : clusters) {
    Json rec;
    rec["seed_id"] = c.seed_id;
    rec["member_ids"] = c.member_ids;
    rec["similarities"] = c.similarities;
    rec["description"] = c.description ? Json(*c.description) : Json(nullptr);
    out += to_jsonl_line(rec);
  }
  return out;
}

void save_clusters(std::span<const Cluster> clusters, const std::filesystem::path& path) {
  write_file(path, serialize_clusters(clusters));
}

std::vector<Cluster> load_clusters(const std::filesystem::path& path) {
  std::vector<Cluster> clusters;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      Cluster c;
      c.seed_id = rec.at("seed_id").get<ParaId>();
      c.member_ids = rec.at("member_ids").get<std::vector<ParaId>>();
      c.similarities = rec.at("similarities").get<std::vector<double>>();
      if (rec.contains("description") && rec["description"].is_string())
        c.description = rec["description"].get<std::string>();
      clusters.push_back(std::move(c));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  });
  return clusters;
}

}  // namespace lmar::clustering
