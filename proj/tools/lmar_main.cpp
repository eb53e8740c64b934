#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lmar/config.hpp"
#include "lmar/error.hpp"
#include "lmar/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::string mock_llm;
  bool stub_embeddings = false;
  std::string out;
  std::string corpus;
  // cluster
  std::optional<std::size_t> k;
  std::optional<double> delta;
  bool grid = false;
  // train
  std::string train_stage;
};

lmar::config::PipelineConfig build_config(const Flags& f) {
  auto cfg = lmar::config::load_config(f.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mock_llm.empty()) {
    cfg.llm.kind = lmar::ProviderKind::Mock;
    cfg.llm.script_path = f.mock_llm;
  }
  if (f.stub_embeddings) cfg.embedding.kind = lmar::ProviderKind::Stub;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.corpus.empty()) cfg.corpus = f.corpus;
  if (f.k || f.delta) {
    if (f.k) cfg.cluster.k = *f.k;
    if (f.delta) cfg.cluster.delta = *f.delta;
    cfg.grid = f.grid;
  } else if (f.grid) {
    cfg.grid = true;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  using lmar::pipeline::Stage;
  CLI::App app{"lmar: closed-loop retriever adaptation from a directory of documents"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "TOML-style configuration file");
  app.add_flag("--resume", f.resume, "skip stages whose manifest entry is up to date");
  app.add_option("--seed", f.seed, "global RNG seed");
  app.add_option("--mock-llm", f.mock_llm, "replay LLM responses from a JSONL script");
  app.add_flag("--stub-embeddings", f.stub_embeddings, "use the offline hashing embedder");
  app.add_option("--out", f.out, "artifact directory");
  app.add_option("--corpus", f.corpus, "corpus directory or file (overrides the config)");

  std::vector<Stage> stages;
  auto add = [&](const char* name, const char* help, Stage s) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&, s] { stages = {s}; });
    return sub;
  };
  add("ingest", "segment the corpus into paragraphs", Stage::Ingest);
  add("embed", "embed every paragraph", Stage::Embed);
  add("triplets", "sample and label triplets", Stage::Triplets);
  auto* cluster = add("cluster", "sampling-based KNN clustering", Stage::Cluster);
  cluster->add_option("--k", f.k, "maximum cluster size (disables the grid unless --grid)");
  cluster->add_option("--delta", f.delta, "similarity threshold (disables the grid unless --grid)");
  cluster->add_flag("--grid", f.grid, "grid-search k and delta");
  add("qepairs", "synthesize question-evidence pairs", Stage::QePairs);
  auto* train = app.add_subcommand("train", "train the adapter");
  train->add_option("--stage", f.train_stage, "triplet or qe (default: qe when qepairs exist, else triplet)")
      ->check(CLI::IsMember({"triplet", "qe"}));
  train->callback([&] { stages = {}; });
  add("evaluate", "baseline vs adapted retrieval metrics", Stage::Evaluate);
  add("report", "print the report and gate on validator violations", Stage::Report);
  auto* pipe = app.add_subcommand("pipeline", "run every stage");
  pipe->callback([&] { stages = lmar::pipeline::all_stages(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : lmar::pipeline::kExitConfig;
  }

  try {
    auto cfg = build_config(f);
    if (stages.empty()) {
      bool qe = f.train_stage == "qe" ||
                (f.train_stage.empty() && std::filesystem::exists(cfg.out_dir / lmar::pipeline::files::kQePairs));
      stages = {qe ? Stage::TrainQe : Stage::TrainTriplet};
    }
    lmar::pipeline::RunOptions opts;
    opts.resume = f.resume;
    opts.log = &std::cout;
    lmar::pipeline::Pipeline p(std::move(cfg), opts);
    auto result = p.run(stages);
    return result.exit_code;
  } catch (const lmar::Error& e) {
    std::cerr << "lmar: " << e.what() << "\n";
    return lmar::pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "lmar: " << e.what() << "\n";
    return lmar::pipeline::kExitFailure;
  }
}
