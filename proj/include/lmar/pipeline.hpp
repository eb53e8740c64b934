#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "lmar/config.hpp"
#include "lmar/error.hpp"
#include "lmar/llm_gateway.hpp"

namespace lmar::pipeline {

enum class Stage { Ingest, Embed, Triplets, TrainTriplet, Cluster, QePairs, TrainQe, Evaluate, Report };

std::string_view stage_name(Stage stage);
/// Execution order of a full run.
const std::vector<Stage>& all_stages();

/// Process exit status for a failure code: 2 config, 3 provider, 1 other.
/// Invariant violations found by the report gate exit with 4.
int exit_code_for(ErrorCode code);
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitProvider = 3;
inline constexpr int kExitInvariant = 4;

/// Artifact file names inside the output directory.
namespace files {
inline constexpr const char* kStore = "corpus.store.jsonl";
inline constexpr const char* kEmbeddings = "embeddings.bin";
inline constexpr const char* kTriplets = "triplets.jsonl";
inline constexpr const char* kSkipped = "skipped.jsonl";
inline constexpr const char* kTripletStats = "triplets.stats.json";
inline constexpr const char* kTripletAdapter = "adapter.triplet.lmad";
inline constexpr const char* kTripletReport = "train.triplet.json";
inline constexpr const char* kClusters = "clusters.jsonl";
inline constexpr const char* kClusterParams = "cluster.params.json";
inline constexpr const char* kQePairs = "qepairs.jsonl";
inline constexpr const char* kDescribedClusters = "clusters.described.jsonl";
inline constexpr const char* kQeStats = "qepairs.stats.json";
inline constexpr const char* kAdapter = "adapter.lmad";
inline constexpr const char* kQeReport = "train.qe.json";
inline constexpr const char* kEvalQueries = "eval_queries.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kSummary = "summary.txt";
inline constexpr const char* kLedger = "ledger.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace files

struct RunOptions {
  /// Skip stages whose manifest entry matches current inputs and outputs.
  bool resume = false;
  /// Progress lines ("stage <name>: ran|skipped"); nullptr for silence.
  std::ostream* log = nullptr;
  /// Replaces the configured LLM provider (tests and oracle runs).
  std::function<std::unique_ptr<llm::ChatProvider>()> chat_factory;
};

struct StageOutcome {
  Stage stage;
  bool skipped;
};

struct GateResult {
  std::size_t partition_violations = 0;
  std::size_t grounding_violations = 0;
  std::size_t ratio_violations = 0;
  bool tcdt_consistent = true;
  std::vector<std::string> messages;

  bool ok() const {
    return partition_violations == 0 && grounding_violations == 0 && ratio_violations == 0 && tcdt_consistent;
  }
  Json to_json() const;
};

struct RunResult {
  std::vector<StageOutcome> stages;
  GateResult gate;
  int exit_code = kExitOk;

  bool ran(Stage s) const;
};

class Pipeline {
 public:
  /// Validates the configuration (ConfigError) before anything touches disk.
  Pipeline(config::PipelineConfig config, RunOptions options = {});
  ~Pipeline();

  /// Every stage in order; stops at the first failure (Error propagates).
  RunResult run_all();
  /// One stage; its inputs must already exist (MissingArtifact).
  RunResult run(Stage stage);
  /// Several stages in the given order.
  RunResult run(std::span<const Stage> stages);

  const config::PipelineConfig& config() const { return config_; }

 private:
  struct Impl;
  config::PipelineConfig config_;
  RunOptions options_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lmar::pipeline
