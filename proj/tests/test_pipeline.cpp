#include <functional>
#include <sstream>

#include "doctest.h"
#include "lmar/clustering.hpp"
#include "lmar/config.hpp"
#include "lmar/error.hpp"
#include "lmar/pipeline.hpp"
#include "support.hpp"

using namespace lmar;
using namespace lmar::pipeline;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an lmar::Error");
  return ErrorCode::InvalidArgument;
}

config::PipelineConfig small_config(const std::filesystem::path& out) {
  auto cfg = config::load_config(std::nullopt);
  cfg.corpus = testing::fixture_dir() / "corpus50";
  cfg.out_dir = out;
  cfg.seed = 17;
  cfg.llm.script_path = (testing::fixture_dir() / "mock50.jsonl").string();
  return cfg;
}

std::vector<std::string> log_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("toml subset parser") {
  auto kv = config::parse_toml(R"(
seed = 42   # trailing comment
name = "a # not a comment"
[cluster]
delta = 0.5
grid = false
grid_k = [4, 8]
)");
  CHECK(kv.at("seed") == 42);
  CHECK(kv.at("name") == "a # not a comment");
  CHECK(kv.at("cluster.delta") == 0.5);
  CHECK(kv.at("cluster.grid") == false);
  CHECK(kv.at("cluster.grid_k") == Json::array({4, 8}));

  CHECK(code_of([] { config::parse_toml("seed = \n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config::parse_toml("[cluster\nk = 3\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config::parse_toml("name = \"open\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config::parse_toml("a = 1\na = 2\n"); }) == ErrorCode::ConfigError);
  try {
    config::parse_toml("ok = 1\n\nbroken line\n");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  CHECK(code_of([] { config::config_from_toml("bogus = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { config::config_from_toml("[cluster]\nk = \"eight\"\n"); }) == ErrorCode::ConfigError);

  auto cfg = config::config_from_toml("seed = 9\n[cluster]\ngrid = false\nk = 6\ndelta = 0.4\n[train]\nmax_epochs = 0\n");
  CHECK(cfg.seed == 9);
  CHECK(!cfg.grid);
  CHECK(cfg.cluster.k == 6);
  CHECK(cfg.train.max_epochs == 0);
  CHECK(cfg.embedding.kind == ProviderKind::Stub);
  CHECK(cfg.llm.kind == ProviderKind::Mock);

  auto bad = small_config(testing::scratch("cfg_bad_delta") / "out");
  bad.cluster.delta = 1.5;
  CHECK(code_of([&] { Pipeline p(bad); }) == ErrorCode::ConfigError);
  CHECK(!std::filesystem::exists(bad.out_dir));

  auto a = config::config_from_toml("seed = 3\n");
  auto b = config::config_from_toml("# same settings\nseed = 3\n");
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.stage_seed("triplets") != a.stage_seed("cluster"));
  CHECK(a.fingerprint() != config::config_from_toml("seed = 4\n").fingerprint());

  ::setenv("LMAR_LLM_BASE_URL", "http://example.invalid/v1", 1);
  CHECK(config::load_config(std::nullopt).llm.base_url == "http://example.invalid/v1");
  ::unsetenv("LMAR_LLM_BASE_URL");
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ErrorCode::ConfigError) == kExitConfig);
  CHECK(exit_code_for(ErrorCode::InvalidArgument) == kExitConfig);
  CHECK(exit_code_for(ErrorCode::ProviderUnavailable) == kExitProvider);
  CHECK(exit_code_for(ErrorCode::ScriptExhausted) == kExitProvider);
  CHECK(exit_code_for(ErrorCode::BudgetExceeded) == kExitProvider);
  CHECK(exit_code_for(ErrorCode::EmptyCorpus) == kExitFailure);
}

TEST_CASE("full run: zero epochs, ledger, gate and resume") {
  auto dir = testing::scratch("pipeline_full");
  auto cfg = small_config(dir);
  cfg.train.max_epochs = 0;
  std::ostringstream log;
  RunOptions opts;
  opts.log = &log;
  auto result = Pipeline(cfg, opts).run_all();
  CHECK(result.exit_code == kExitOk);
  CHECK(result.gate.ok());
  for (Stage s : all_stages()) CHECK(result.ran(s));

  auto report = Json::parse(read_file(dir / files::kReport));
  CHECK(report.at("baseline") == report.at("adapted"));
  auto ledger = llm::TokenLedger::from_json(Json::parse(read_file(dir / files::kLedger)));
  CHECK(ledger.consistent());
  CHECK(report.at("tcdt").get<double>() == llm::compute_tcdt(ledger));
  CHECK(ledger.document_tokens == report.at("corpus").at("document_tokens").get<std::int64_t>());
  CHECK(ledger.per_stage.count("triplets") == 1);
  CHECK(ledger.per_stage.count("qepairs") == 1);
  CHECK(std::filesystem::exists(dir / files::kSummary));

  SUBCASE("resume skips everything when nothing changed") {
    std::ostringstream again_log;
    RunOptions again;
    again.resume = true;
    again.log = &again_log;
    auto r = Pipeline(cfg, again).run_all();
    for (const auto& s : r.stages)
      if (s.stage != Stage::Report) CHECK(s.skipped);
    CHECK(read_file(dir / files::kReport) == report.dump(2) + "\n");
  }

  SUBCASE("resume reruns only what a deleted artifact invalidates") {
    std::filesystem::remove(dir / files::kReport);
    std::ostringstream again_log;
    RunOptions again;
    again.resume = true;
    again.log = &again_log;
    auto r = Pipeline(cfg, again).run_all();
    std::vector<std::string> ran;
    for (const auto& s : r.stages)
      if (!s.skipped) ran.emplace_back(stage_name(s.stage));
    CHECK(ran == std::vector<std::string>{"evaluate", "report"});
  }

  SUBCASE("report gate exits 4 on a partition violation") {
    auto clusters = clustering::load_clusters(dir / files::kClusters);
    REQUIRE(clusters.size() >= 2);
    clusters[1].member_ids.push_back(clusters[0].member_ids.front());
    clusters[1].similarities.push_back(0.99);
    clustering::save_clusters(clusters, dir / files::kClusters);
    auto r = Pipeline(cfg).run(Stage::Report);
    CHECK(r.exit_code == kExitInvariant);
    CHECK(r.gate.partition_violations > 0);
    CHECK(!r.gate.ok());
  }

  SUBCASE("report gate catches a tampered ledger") {
    auto j = Json::parse(read_file(dir / files::kLedger));
    j["input_tokens"] = j["input_tokens"].get<std::int64_t>() + 1;
    write_file(dir / files::kLedger, j.dump(2));
    auto r = Pipeline(cfg).run(Stage::Report);
    CHECK(r.exit_code == kExitInvariant);
    CHECK(!r.gate.tcdt_consistent);
  }
}

TEST_CASE("stages need their inputs") {
  auto cfg = small_config(testing::scratch("pipeline_missing"));
  CHECK(code_of([&] { Pipeline(cfg).run(Stage::Cluster); }) == ErrorCode::MissingArtifact);
}

TEST_CASE("an exhausted script surfaces as a provider failure") {
  auto dir = testing::scratch("pipeline_exhausted");
  auto cfg = small_config(dir);
  write_file(dir / "short.jsonl", "{\"content\": \"Error\", \"input_tokens\": 1, \"output_tokens\": 1}\n");
  cfg.llm.script_path = (dir / "short.jsonl").string();
  try {
    Pipeline(cfg).run_all();
    FAIL("expected ScriptExhausted");
  } catch (const Error& e) {
    CHECK(exit_code_for(e.code()) == kExitProvider);
  }
}
