#include "lmar/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lmar/clustering.hpp"
#include "lmar/corpus.hpp"
#include "lmar/embedding.hpp"
#include "lmar/evalkit.hpp"
#include "lmar/qepair.hpp"
#include "lmar/rng.hpp"
#include "lmar/trainer.hpp"
#include "lmar/triplet.hpp"

namespace lmar::pipeline {

namespace fs = std::filesystem;

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::Ingest: return "ingest";
    case Stage::Embed: return "embed";
    case Stage::Triplets: return "triplets";
    case Stage::TrainTriplet: return "train_triplet";
    case Stage::Cluster: return "cluster";
    case Stage::QePairs: return "qepairs";
    case Stage::TrainQe: return "train_qe";
    case Stage::Evaluate: return "evaluate";
    case Stage::Report: return "report";
  }
  return "unknown";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> order{Stage::Ingest,  Stage::Embed,   Stage::Triplets,
                                        Stage::TrainTriplet, Stage::Cluster, Stage::QePairs,
                                        Stage::TrainQe, Stage::Evaluate, Stage::Report};
  return order;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return kExitConfig;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::ScriptExhausted:
    case ErrorCode::BudgetExceeded: return kExitProvider;
    default: return kExitFailure;
  }
}

Json GateResult::to_json() const {
  return Json{{"ok", ok()},
              {"partition_violations", partition_violations},
              {"grounding_violations", grounding_violations},
              {"ratio_violations", ratio_violations},
              {"tcdt_consistent", tcdt_consistent},
              {"messages", messages}};
}

bool RunResult::ran(Stage s) const {
  return std::any_of(stages.begin(), stages.end(), [&](const StageOutcome& o) { return o.stage == s && !o.skipped; });
}

namespace {

Json read_json(const fs::path& path) {
  auto j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::MalformedRecord, path.string() + " is not valid JSON");
  return j;
}

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

std::string hash_corpus_source(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "corpus does not exist: " + path.string());
  if (fs::is_regular_file(path)) return sha256_file(path);
  std::vector<fs::path> entries;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file()) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  std::string acc;
  for (const auto& e : entries) acc += fs::relative(e, path).generic_string() + "\0" + sha256_file(e) + "\n";
  return sha256_hex(acc);
}

Json usage_json(const llm::StageUsage& u) {
  return Json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}, {"calls", u.calls}};
}

llm::StageUsage usage_from_json(const Json& j) {
  return {j.at("input_tokens").get<std::int64_t>(), j.at("output_tokens").get<std::int64_t>(),
          j.at("calls").get<std::int64_t>()};
}

Json cluster_params_json(const clustering::ClusterParams& p) {
  return Json{{"k", p.k}, {"delta", p.delta}, {"rng_seed", p.rng_seed}};
}

clustering::ClusterParams cluster_params_from_json(const Json& j) {
  clustering::ClusterParams p;
  p.k = j.at("k").get<std::size_t>();
  p.delta = j.at("delta").get<double>();
  p.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return p;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

struct Pipeline::Impl {
  const config::PipelineConfig& cfg;
  const RunOptions& opts;
  fs::path out;
  Json manifest;

  Impl(const config::PipelineConfig& c, const RunOptions& o) : cfg(c), opts(o), out(c.out_dir) {
    fs::create_directories(out);
    manifest = fs::exists(out / files::kManifest) ? read_json(out / files::kManifest) : Json::object();
    if (!manifest.contains("stages")) manifest["stages"] = Json::object();
  }

  fs::path at(const char* name) const { return out / name; }

  fs::path need(const char* name) const {
    fs::path p = at(name);
    if (!fs::exists(p)) throw Error(ErrorCode::MissingArtifact, p.string() + " (run the producing stage first)");
    return p;
  }

  std::string sha(const char* name) const { return sha256_file(need(name)); }

  // ---- manifest ----

  std::vector<const char*> outputs_of(Stage s) const {
    switch (s) {
      case Stage::Ingest: return {files::kStore};
      case Stage::Embed: return {files::kEmbeddings};
      case Stage::Triplets: return {files::kTriplets, files::kSkipped, files::kTripletStats};
      case Stage::TrainTriplet: return {files::kTripletAdapter, files::kTripletReport};
      case Stage::Cluster: return {files::kClusters, files::kClusterParams};
      case Stage::QePairs: return {files::kQePairs, files::kDescribedClusters, files::kQeStats};
      case Stage::TrainQe: return {files::kAdapter, files::kQeReport};
      case Stage::Evaluate: return {files::kEvalQueries, files::kReport, files::kSummary, files::kLedger};
      case Stage::Report: return {};
    }
    return {};
  }

  std::string input_hash(Stage s) const {
    Json in;
    in["stage"] = stage_name(s);
    Json c = cfg.to_json();
    auto add = [&](const char* name) { in["artifacts"][name] = sha(name); };
    switch (s) {
      case Stage::Ingest:
        in["corpus"] = hash_corpus_source(cfg.corpus);
        in["config"] = c["segmentation"];
        break;
      case Stage::Embed:
        add(files::kStore);
        in["config"] = c["embedding"];
        break;
      case Stage::Triplets:
        add(files::kStore);
        add(files::kEmbeddings);
        in["config"] = {c["triplets"], c["llm"], c["seed"], c["cluster"]["k"]};
        break;
      case Stage::TrainTriplet:
        add(files::kTriplets);
        add(files::kEmbeddings);
        in["config"] = {c["train"], c["triplets"]["val_fraction"], c["seed"]};
        break;
      case Stage::Cluster:
        add(files::kEmbeddings);
        add(files::kTripletAdapter);
        in["config"] = {c["cluster"], c["seed"]};
        break;
      case Stage::QePairs:
        add(files::kStore);
        add(files::kClusters);
        in["config"] = {c["qe"], c["llm"], c["seed"]};
        break;
      case Stage::TrainQe:
        add(files::kEmbeddings);
        add(files::kQePairs);
        add(files::kTripletAdapter);
        in["config"] = {c["train"], c["embedding"], c["seed"]};
        break;
      case Stage::Evaluate:
        for (auto f : {files::kStore, files::kEmbeddings, files::kTriplets, files::kSkipped, files::kTripletStats,
                       files::kTripletAdapter, files::kTripletReport, files::kClusters, files::kClusterParams,
                       files::kQePairs, files::kDescribedClusters, files::kQeStats, files::kAdapter, files::kQeReport})
          add(f);
        if (!cfg.eval_queries.empty()) in["eval_queries"] = sha256_file(cfg.eval_queries);
        in["config"] = cfg.fingerprint();
        break;
      case Stage::Report: break;
    }
    return sha256_hex(in.dump());
  }

  bool up_to_date(Stage s) const {
    const auto& stages = manifest["stages"];
    auto it = stages.find(std::string(stage_name(s)));
    if (it == stages.end()) return false;
    for (auto name : outputs_of(s)) {
      auto rec = it->at("outputs").find(name);
      if (rec == it->at("outputs").end() || !fs::exists(at(name)) || sha256_file(at(name)) != rec->get<std::string>())
        return false;
    }
    try {
      return it->at("input_hash").get<std::string>() == input_hash(s);
    } catch (const Error&) {
      return false;
    }
  }

  void record(Stage s, const std::string& in_hash) {
    Json entry;
    entry["input_hash"] = in_hash;
    entry["outputs"] = Json::object();
    for (auto name : outputs_of(s)) entry["outputs"][name] = sha256_file(at(name));
    manifest["stages"][std::string(stage_name(s))] = entry;
    write_json(at(files::kManifest), manifest);
  }

  // ---- shared loaders ----

  std::unique_ptr<llm::Gateway> gateway;

  llm::Gateway& gw() {
    if (!gateway) {
      auto provider = opts.chat_factory ? opts.chat_factory() : llm::make_chat_provider(cfg.llm);
      gateway = std::make_unique<llm::Gateway>(std::move(provider), cfg.token_budget);
    }
    return *gateway;
  }

  corpus::CorpusStore store() const { return corpus::load_store(need(files::kStore)); }

  embedding::LoadedMatrix raw_index() const { return embedding::load_matrix(need(files::kEmbeddings)); }

  trainer::TrainConfig train_config(std::string_view stage) const {
    trainer::TrainConfig t = cfg.train;
    t.rng_seed = cfg.stage_seed(stage);
    if (t.max_epochs == 0) t.init_sigma = 0.0;
    return t;
  }

  clustering::ClusterParams cluster_params() const {
    auto p = cfg.cluster;
    p.rng_seed = cfg.stage_seed("cluster");
    return p;
  }

  // ---- stages ----

  void ingest() {
    auto s = corpus::load_corpus(cfg.corpus, cfg.segmentation);
    corpus::save_store(s, at(files::kStore));
  }

  void embed() {
    auto s = store();
    auto provider = embedding::make_provider(cfg.embedding);
    auto texts = s.texts();
    auto vectors = embedding::embed_batch(*provider, texts);
    std::vector<ParaId> ids;
    for (const auto& p : s.paragraphs()) ids.push_back(p.para_id);
    auto m = embedding::EmbeddingMatrix::from_vectors(vectors, ids);
    embedding::save_matrix(m, at(files::kEmbeddings), provider->fingerprint());
  }

  void triplets() {
    auto s = store();
    auto index = raw_index().matrix;
    std::size_t k = cfg.triplet_candidate_k ? cfg.triplet_candidate_k : cfg.cluster.k;
    std::size_t count = cfg.triplet_count ? cfg.triplet_count : 2 * s.size();
    auto candidates = triplet::sample_triplet_candidates(index, k, count, cfg.stage_seed("triplets"));
    auto texts = s.texts();
    auto& g = gw();
    g.reset_stage("triplets");
    triplet::LabelOptions lo;
    lo.model = cfg.llm_model;
    auto result = triplet::label_all(g, candidates, texts, lo);
    write_file(at(files::kTriplets), triplet::serialize_triplets(result.labeled));
    write_file(at(files::kSkipped), triplet::serialize_skipped(result.skipped));
    std::size_t ambiguous = 0, parse = 0;
    for (const auto& sk : result.skipped) (sk.why == "ambiguous" ? ambiguous : parse)++;
    Json stats{{"sampled", candidates.size()},
               {"labeled", result.labeled.size()},
               {"skipped", result.skipped.size()},
               {"skipped_ambiguous", ambiguous},
               {"skipped_parse", parse},
               {"skip_rate", result.skip_rate()},
               {"candidate_k", k},
               {"usage", usage_json(stage_usage("triplets"))}};
    write_json(at(files::kTripletStats), stats);
    write_ledger_snapshot();
  }

  llm::StageUsage stage_usage(const std::string& stage) {
    auto l = gw().ledger();
    auto it = l.per_stage.find(stage);
    return it == l.per_stage.end() ? llm::StageUsage{} : it->second;
  }

  void train_triplet() {
    auto index = raw_index().matrix;
    auto labeled = triplet::load_triplets(need(files::kTriplets));
    auto [train, val] = triplet::split_triplets(labeled, cfg.triplet_val_fraction, cfg.stage_seed("triplet_split"));
    auto example = [&](const triplet::LabeledTriplet& t) {
      auto row = [&](ParaId id) {
        auto pos = index.position_of(id);
        if (pos == index.n()) throw Error(ErrorCode::MalformedRecord, "triplet cites unknown id " + std::to_string(id));
        return index.row_vector(pos);
      };
      return trainer::TripletExample{row(t.anchor_id), row(t.positive_id), row(t.negative_id)};
    };
    trainer::TripletDataset data;
    for (const auto& t : train) data.train.push_back(example(t));
    for (const auto& t : val) data.val.push_back(example(t));
    auto tc = train_config("train_triplet");
    auto init = trainer::AdapterParams::identity(index.d(), tc.init_sigma, derive_seed(tc.rng_seed, 7));
    auto result = trainer::train_stage(data, tc, init);
    Json report = result.report.to_json();
    report["train_size"] = data.train.size();
    report["val_size"] = data.val.size();
    report["order_rate_train"] = trainer::triplet_order_rate(result.params, data.train, tc.norm_p);
    report["order_rate_train_initial"] = trainer::triplet_order_rate(init, data.train, tc.norm_p);
    trainer::save_checkpoint(result.params, trailer(tc, result.report, "triplet"), at(files::kTripletAdapter));
    write_json(at(files::kTripletReport), report);
  }

  Json trailer(const trainer::TrainConfig& tc, const trainer::TrainReport& r, const std::string& stage) const {
    return Json{{"stage", stage},
                {"config", tc.to_json()},
                {"stop_epoch", r.stop_epoch},
                {"best_epoch", r.best_epoch},
                {"stop_reason", r.stop_reason},
                {"provider_fingerprint", cfg.embedding.fingerprint()}};
  }

  void cluster() {
    auto raw = raw_index().matrix;
    auto adapter = trainer::load_checkpoint(need(files::kTripletAdapter)).params;
    auto index = trainer::adapt_index(adapter, raw);
    auto params = cluster_params();
    Json info;
    if (cfg.grid) {
      std::vector<clustering::ClusterParams> grid;
      for (auto k : cfg.grid_k)
        for (auto d : cfg.grid_delta) grid.push_back({k, d, params.rng_seed, });
      clustering::ObjectiveSpec obj;
      obj.sample_fraction = cfg.grid_sample_fraction;
      obj.rng_seed = cfg.stage_seed("grid");
      auto result = clustering::grid_search_params(index, grid, obj);
      params = result.best;
      info["grid"] = Json::array();
      for (const auto& cell : result.cells) {
        Json c = cluster_params_json(cell.params);
        c["objective"] = cell.objective ? Json(*cell.objective) : Json(nullptr);
        if (!cell.error.empty()) c["error"] = cell.error;
        info["grid"].push_back(c);
      }
    }
    auto clusters = clustering::sample_knn_cluster(index, params);
    info["params"] = cluster_params_json(params);
    info["clusters"] = clusters.size();
    info["mean_intra_cluster_similarity"] = clustering::mean_intra_cluster_similarity(clusters);
    clustering::save_clusters(clusters, at(files::kClusters));
    write_json(at(files::kClusterParams), info);
  }

  void qepairs() {
    auto s = store();
    auto clusters = clustering::load_clusters(need(files::kClusters));
    auto texts = s.texts();
    auto& g = gw();
    g.reset_stage("qepairs");
    qepair::SynthesisOptions so;
    so.model = cfg.llm_model;
    so.max_question_num = cfg.max_question_num;
    auto synth = qepair::synthesize(g, clusters, texts, so);
    auto negatives =
        qepair::sample_negatives(synth.positives, clusters, s.size(), cfg.negative_ratio, cfg.stage_seed("negatives"));
    std::vector<qepair::QEPair> all = synth.positives;
    all.insert(all.end(), negatives.begin(), negatives.end());
    auto [train, val] = qepair::split_train_val(all, cfg.qe_val_fraction, cfg.stage_seed("qe_split"));
    std::vector<qepair::QEPair> ordered = train;
    ordered.insert(ordered.end(), val.begin(), val.end());
    write_file(at(files::kQePairs), qepair::serialize_pairs(ordered));
    clustering::save_clusters(clusters, at(files::kDescribedClusters));
    const auto& st = synth.stats;
    Json stats{{"clusters", st.clusters},
               {"clusters_excluded", st.clusters_excluded},
               {"generation_skipped", st.generation_skipped},
               {"pairs_dropped_foreign", st.pairs_dropped_foreign},
               {"pairs_dropped_empty", st.pairs_dropped_empty},
               {"pairs_dropped_excess", st.pairs_dropped_excess},
               {"grade_parse_failures", st.grade_parse_failures},
               {"positives", synth.positives.size()},
               {"negatives", negatives.size()},
               {"train_pairs", train.size()},
               {"val_pairs", val.size()},
               {"usage", usage_json(stage_usage("qepairs"))}};
    write_json(at(files::kQeStats), stats);
    write_ledger_snapshot();
  }

  void train_qe() {
    auto raw = raw_index().matrix;
    auto pairs = qepair::load_pairs(need(files::kQePairs));
    auto init = trainer::load_checkpoint(need(files::kTripletAdapter)).params;

    std::vector<std::string> questions;
    std::map<std::string, std::size_t> question_pos;
    for (const auto& p : pairs)
      if (question_pos.emplace(p.question, questions.size()).second) questions.push_back(p.question);
    auto provider = embedding::make_provider(cfg.embedding);
    auto qvecs = embedding::embed_batch(*provider, questions);

    trainer::PairDataset data;
    for (const auto& p : pairs) {
      trainer::PairExample ex;
      ex.question = embedding::normalize(qvecs[question_pos.at(p.question)]);
      for (auto id : p.evidence_ids) {
        auto pos = raw.position_of(id);
        if (pos == raw.n()) throw Error(ErrorCode::MalformedRecord, "pair cites unknown id " + std::to_string(id));
        ex.evidence.push_back(raw.row_vector(pos));
      }
      ex.y = p.polarity == qepair::Polarity::Positive ? 1 : -1;
      ex.s = p.grade;
      (p.split == "val" ? data.val : data.train).push_back(std::move(ex));
    }
    auto tc = train_config("train_qe");
    auto result = trainer::train_stage(data, tc, init);
    Json report = result.report.to_json();
    report["train_size"] = data.train.size();
    report["val_size"] = data.val.size();
    trainer::save_checkpoint(result.params, trailer(tc, result.report, "qe"), at(files::kAdapter));
    write_json(at(files::kQeReport), report);
  }

  llm::TokenLedger assemble_ledger(std::int64_t document_tokens) const {
    llm::TokenLedger l;
    l.document_tokens = document_tokens;
    for (auto [stage, file] : {std::pair{"triplets", files::kTripletStats}, std::pair{"qepairs", files::kQeStats}})
      if (fs::exists(at(file))) l.set_stage(stage, usage_from_json(read_json(at(file)).at("usage")));
    return l;
  }

  void write_ledger_snapshot() {
    std::int64_t doc = fs::exists(at(files::kStore)) ? static_cast<std::int64_t>(store().total_document_tokens()) : 0;
    auto l = assemble_ledger(doc);
    Json j = l.to_json();
    write_json(at(files::kLedger), j);
  }

  std::vector<evalkit::QuerySpec> eval_specs() const {
    if (!cfg.eval_queries.empty()) return evalkit::load_queries(cfg.eval_queries);
    std::vector<evalkit::QuerySpec> out;
    std::map<std::string, std::size_t> pos;
    for (const auto& p : qepair::load_pairs(need(files::kQePairs))) {
      if (p.split != "val" || p.polarity != qepair::Polarity::Positive) continue;
      auto [it, fresh] = pos.emplace(p.question, out.size());
      if (fresh) out.push_back({p.question, {}});
      auto& gold = out[it->second].gold_ids;
      for (auto id : p.evidence_ids)
        if (std::find(gold.begin(), gold.end(), id) == gold.end()) gold.push_back(id);
    }
    return out;
  }

  evalkit::MetricsReport measure(const trainer::AdapterParams& adapter, const embedding::EmbeddingMatrix& raw,
                                 const std::vector<evalkit::QuerySpec>& specs,
                                 const std::vector<embedding::EmbeddingVector>& qvecs,
                                 std::span<const std::string> texts) const {
    auto index = trainer::adapt_index(adapter, raw);
    std::vector<evalkit::EvalQuery> queries;
    for (std::size_t i = 0; i < specs.size(); ++i)
      queries.push_back({specs[i].question, specs[i].gold_ids, trainer::apply_adapter(adapter, qvecs[i])});
    return evalkit::evaluate_all(queries, index, texts, cfg.eval_k);
  }

  GateResult gate() const {
    GateResult g;
    auto s = store();
    auto params = cluster_params_from_json(read_json(need(files::kClusterParams)).at("params"));
    auto clusters = clustering::load_clusters(need(files::kClusters));
    auto pr = clustering::validate_partition(clusters, s.size(), params);
    g.partition_violations = pr.violation_count();
    if (!pr.ok()) g.messages.push_back("partition: " + std::to_string(pr.violation_count()) + " violation(s)");

    auto described = clustering::load_clusters(need(files::kDescribedClusters));
    auto pairs = qepair::load_pairs(need(files::kQePairs));
    auto gr = qepair::validate_pairs(pairs, described);
    g.grounding_violations = gr.ungrounded_positives + gr.overlapping_negatives + gr.bad_cluster_index + gr.leaked_questions;
    if (g.grounding_violations) g.messages.push_back("grounding: " + std::to_string(g.grounding_violations) + " violation(s)");
    if (gr.negatives != cfg.negative_ratio * gr.positives) {
      g.ratio_violations = 1;
      g.messages.push_back("ratio: " + std::to_string(gr.negatives) + " negatives for " + std::to_string(gr.positives) +
                           " positives, expected ratio " + std::to_string(cfg.negative_ratio));
    }
    if (described.size() != clusters.size()) {
      g.partition_violations += 1;
      g.messages.push_back("described clusters differ from clusters.jsonl");
    }
    return g;
  }

  void evaluate() {
    auto s = store();
    auto texts = s.texts();
    auto loaded = raw_index();
    const auto& raw = loaded.matrix;
    auto ck = trainer::load_checkpoint(need(files::kAdapter));
    auto specs = eval_specs();
    if (specs.empty()) throw Error(ErrorCode::NoQueries, "no evaluation queries (validation split has no positives)");
    std::vector<std::string> questions;
    for (const auto& q : specs) questions.push_back(q.question);
    auto provider = embedding::make_provider(cfg.embedding);
    auto qraw = embedding::embed_batch(*provider, questions);
    std::vector<embedding::EmbeddingVector> qvecs;
    for (auto& v : qraw) qvecs.push_back(embedding::normalize(v));

    auto identity = trainer::AdapterParams::identity(raw.d());
    auto baseline = measure(identity, raw, specs, qvecs, texts);
    auto adapted = measure(ck.params, raw, specs, qvecs, texts);

    auto ledger = assemble_ledger(static_cast<std::int64_t>(s.total_document_tokens()));
    double tcdt = llm::compute_tcdt(ledger);
    auto g = gate();

    Json report;
    report["format_version"] = 1;
    report["config_fingerprint"] = cfg.fingerprint();
    report["corpus"] = {{"paragraphs", s.size()},
                        {"document_tokens", s.total_document_tokens()},
                        {"store_sha256", sha(files::kStore)}};
    report["embedding_fingerprint"] = loaded.fingerprint;
    report["eval_queries"] = cfg.eval_queries.empty() ? "qe_val_positives" : "configured";
    report["baseline"] = baseline.to_json();
    report["adapted"] = adapted.to_json();
    report["uplift"] = {{"accuracy", adapted.accuracy - baseline.accuracy},
                        {"mrr", adapted.mrr - baseline.mrr},
                        {"tf_score", adapted.tf_score - baseline.tf_score},
                        {"avg_similarity", adapted.avg_similarity - baseline.avg_similarity}};
    report["train"] = {{"triplet", read_json(need(files::kTripletReport))}, {"qe", read_json(need(files::kQeReport))}};
    report["triplets"] = read_json(need(files::kTripletStats));
    report["clustering"] = read_json(need(files::kClusterParams));
    report["qepairs"] = read_json(need(files::kQeStats));
    report["ledger"] = ledger.to_json();
    report["tcdt"] = tcdt;
    report["validators"] = g.to_json();
    report["checkpoint_sha256"] = sha(files::kAdapter);

    write_file(at(files::kEvalQueries), evalkit::serialize_queries(specs));
    write_json(at(files::kLedger), ledger.to_json());
    write_json(at(files::kReport), report);
    write_file(at(files::kSummary), summary(report));
  }

  static std::string summary(const Json& r) {
    std::ostringstream os;
    os << "metric            baseline   adapted    delta\n";
    for (auto key : {"accuracy", "mrr", "tf_score", "avg_similarity"}) {
      double b = r["baseline"][key].get<double>(), a = r["adapted"][key].get<double>();
      std::string name = key;
      name.resize(16, ' ');
      os << name << "  " << fmt(b) << "     " << fmt(a) << "     " << (a - b >= 0 ? "+" : "") << fmt(a - b) << "\n";
    }
    os << "k = " << r["adapted"]["k"] << ", queries = " << r["adapted"]["n_queries"] << "\n\n";
    const auto& l = r["ledger"];
    os << "llm tokens: input " << l["input_tokens"] << ", output " << l["output_tokens"] << ", document "
       << l["document_tokens"] << "\n";
    for (const auto& [stage, u] : l["per_stage"].items())
      os << "  " << stage << ": input " << u["input_tokens"] << ", output " << u["output_tokens"] << ", calls "
         << u["calls"] << "\n";
    os << "TCDT = " << fmt(r["tcdt"].get<double>(), 2) << "\n\n";
    os << "triplet training: stop epoch " << r["train"]["triplet"]["stop_epoch"] << " ("
       << r["train"]["triplet"]["stop_reason"].get<std::string>() << ")\n";
    os << "qe training: stop epoch " << r["train"]["qe"]["stop_epoch"] << " ("
       << r["train"]["qe"]["stop_reason"].get<std::string>() << ")\n";
    os << "validators: " << (r["validators"]["ok"].get<bool>() ? "ok" : "VIOLATIONS") << "\n";
    for (const auto& m : r["validators"]["messages"]) os << "  " << m.get<std::string>() << "\n";
    return os.str();
  }

  GateResult report_gate() {
    auto report = read_json(need(files::kReport));
    auto g = gate();
    auto ledger = llm::TokenLedger::from_json(report.at("ledger"));
    double recomputed = llm::compute_tcdt(ledger);
    if (!ledger.consistent() || std::abs(recomputed - report.at("tcdt").get<double>()) > 1e-12) {
      g.tcdt_consistent = false;
      g.messages.push_back("ledger: totals or TCDT disagree with per-stage usage");
    }
    auto on_disk = llm::TokenLedger::from_json(read_json(need(files::kLedger)));
    if (on_disk.to_json() != ledger.to_json()) {
      g.tcdt_consistent = false;
      g.messages.push_back(std::string("ledger: ") + files::kLedger + " differs from the ledger in the report");
    }
    if (opts.log) {
      *opts.log << summary(report);
      if (!g.ok())
        for (const auto& m : g.messages) *opts.log << "violation: " << m << "\n";
    }
    return g;
  }

  void execute(Stage s) {
    switch (s) {
      case Stage::Ingest: ingest(); break;
      case Stage::Embed: embed(); break;
      case Stage::Triplets: triplets(); break;
      case Stage::TrainTriplet: train_triplet(); break;
      case Stage::Cluster: cluster(); break;
      case Stage::QePairs: qepairs(); break;
      case Stage::TrainQe: train_qe(); break;
      case Stage::Evaluate: evaluate(); break;
      case Stage::Report: break;
    }
  }
};

Pipeline::Pipeline(config::PipelineConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
}

Pipeline::~Pipeline() = default;

RunResult Pipeline::run_all() { return run(all_stages()); }

RunResult Pipeline::run(Stage stage) { return run(std::span<const Stage>(&stage, 1)); }

RunResult Pipeline::run(std::span<const Stage> stages) {
  if (!impl_) impl_ = std::make_unique<Impl>(config_, options_);
  RunResult result;
  for (Stage s : stages) {
    std::string name(stage_name(s));
    if (s == Stage::Report) {
      result.gate = impl_->report_gate();
      result.stages.push_back({s, false});
      if (!result.gate.ok()) result.exit_code = kExitInvariant;
      if (options_.log) *options_.log << "stage report: ran\n";
      continue;
    }
    if (s == Stage::Ingest && config_.corpus.empty())
      throw Error(ErrorCode::ConfigError, "no corpus configured (set corpus = ... or pass --corpus)");
    if (options_.resume && impl_->up_to_date(s)) {
      result.stages.push_back({s, true});
      if (options_.log) *options_.log << "stage " << name << ": skipped\n";
      continue;
    }
    std::string in_hash = impl_->input_hash(s);
    try {
      impl_->execute(s);
    } catch (const Error& e) {
      std::string msg = e.what();
      auto colon = msg.find(": ");
      throw Error(e.code(), "stage " + name + ": " + (colon == std::string::npos ? msg : msg.substr(colon + 2)));
    }
    impl_->record(s, in_hash);
    result.stages.push_back({s, false});
    if (options_.log) *options_.log << "stage " << name << ": ran\n";
  }
  return result;
}

}  // namespace lmar::pipeline
