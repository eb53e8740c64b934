#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmar/clustering.hpp"
#include "lmar/corpus.hpp"
#include "lmar/io.hpp"
#include "lmar/provider.hpp"
#include "lmar/trainer.hpp"

namespace lmar::config {

/// Flat view of a TOML-style file: keys are "section.key" (or "key" before
/// any section header). Supported values: quoted strings, integers, reals,
/// true/false and single-line arrays of those. '#' starts a comment outside
/// strings. Throws ConfigError with the line number.
std::map<std::string, Json> parse_toml(const std::string& text);

struct PipelineConfig {
  std::filesystem::path corpus;
  std::filesystem::path out_dir = "lmar_out";
  std::uint64_t seed = 0;

  corpus::SegmentationRules segmentation;
  ProviderConfig embedding;
  ProviderConfig llm;
  std::string llm_model = "mock";
  std::optional<std::int64_t> token_budget;

  clustering::ClusterParams cluster;
  bool grid = true;
  std::vector<std::size_t> grid_k{4, 8, 16};
  std::vector<double> grid_delta{0.3, 0.5, 0.7};
  double grid_sample_fraction = 0.1;

  /// 0 means "use cluster.k".
  std::size_t triplet_candidate_k = 0;
  /// 0 means 2 * paragraph count.
  std::size_t triplet_count = 0;
  double triplet_val_fraction = 0.3;

  std::size_t max_question_num = 5;
  std::size_t negative_ratio = 4;
  double qe_val_fraction = 0.3;

  trainer::TrainConfig train;

  std::size_t eval_k = 5;
  std::filesystem::path eval_queries;

  /// Range and consistency checks; throws ConfigError.
  void validate() const;
  /// Path-free canonical form; identical settings give identical JSON.
  Json to_json() const;
  std::string fingerprint() const;
  /// The seed for one named consumer, derived from `seed`.
  std::uint64_t stage_seed(std::string_view stage) const;
};

/// Defaults, overlaid with the file (if any), then environment variables
/// (LMAR_LLM_BASE_URL). Unknown keys are a ConfigError.
PipelineConfig load_config(const std::optional<std::filesystem::path>& path);
PipelineConfig config_from_toml(const std::string& text, const std::filesystem::path& base_dir = {});

}  // namespace lmar::config
