#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmar/embedding.hpp"

namespace lmar::clustering {

struct Cluster {
  ParaId seed_id = 0;
  /// Seed first, then members by descending similarity (ties: ascending id).
  std::vector<ParaId> member_ids;
  /// Aligned with member_ids; the seed's entry is exactly 1.0.
  std::vector<double> similarities;
  std::optional<std::string> description;
};

struct ClusterParams {
  /// Maximum cluster size, seed included.
  std::size_t k = 8;
  /// Non-seed members need cosine(seed, member) > delta.
  double delta = 0.5;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Sampling-based KNN clustering.
///
/// Stream contract (replayable): the available set is a list of row
/// positions kept in ascending order. Each iteration draws one value from
/// Rng(rng_seed) and takes available[draw % |available|] as the seed. The seed
/// always joins its own cluster; the remaining members are the top k-1
/// available rows by <z_seed, z_j> (ties: ascending para id) among those with
/// similarity > delta. Members leave the available set; the loop ends when it
/// is empty. Every iteration removes at least the seed, so it terminates.
std::vector<Cluster> sample_knn_cluster(const embedding::EmbeddingMatrix& index, const ClusterParams& params);

struct SubThresholdMember {
  std::size_t cluster_index;
  ParaId id;
  double similarity;
};

/// Diagnostics only; empty means the clusters are a valid partition.
struct PartitionReport {
  std::vector<ParaId> missing;
  std::vector<ParaId> duplicated;
  std::vector<ParaId> unknown;
  std::vector<std::size_t> oversize_clusters;
  std::vector<std::size_t> malformed_clusters;
  std::vector<SubThresholdMember> sub_threshold;

  bool ok() const noexcept {
    return missing.empty() && duplicated.empty() && unknown.empty() && oversize_clusters.empty() &&
           malformed_clusters.empty() && sub_threshold.empty();
  }
  std::size_t violation_count() const noexcept {
    return missing.size() + duplicated.size() + unknown.size() + oversize_clusters.size() +
           malformed_clusters.size() + sub_threshold.size();
  }
};

/// Checks the clusters against ids 0..n-1. Size and threshold checks use
/// params.k and params.delta on the recorded similarities.
PartitionReport validate_partition(std::span<const Cluster> clusters, std::size_t n, const ClusterParams& params);
PartitionReport validate_partition(std::span<const Cluster> clusters, std::span<const ParaId> expected_ids,
                                   const ClusterParams& params);

/// Sum of non-seed member similarities divided by the number of clustered
/// points. Singletons contribute 0, so the value rewards grouping points
/// that are actually close to their seed.
double mean_intra_cluster_similarity(std::span<const Cluster> clusters);

struct ObjectiveSpec {
  /// Fraction of rows (seeded sample, at least one row) each cell clusters.
  double sample_fraction = 0.1;
  std::uint64_t rng_seed = 0;
  /// Overrides the default objective when set. Higher is better.
  std::function<double(std::span<const Cluster>)> score;
};

struct GridCell {
  ClusterParams params;
  std::optional<double> objective;
  std::string error;
};

struct GridSearchResult {
  ClusterParams best;
  std::vector<GridCell> cells;
};

/// Argmax of the objective over the grid; ties by smaller k, then larger
/// delta. A failing cell is recorded and skipped.
GridSearchResult grid_search_params(const embedding::EmbeddingMatrix& index, std::span<const ClusterParams> grid,
                                    const ObjectiveSpec& objective = {});

/// k in {4, 8, 16} x delta in {0.3, 0.5, 0.7}.
std::vector<ClusterParams> default_grid(std::uint64_t rng_seed);

/// clusters.jsonl: {"seed_id", "member_ids", "similarities", "description"}.
std::string serialize_clusters(std::span<const Cluster> clusters);
void save_clusters(std::span<const Cluster> clusters, const std::filesystem::path& path);
std::vector<Cluster> load_clusters(const std::filesystem::path& path);

}  // namespace lmar::clustering
