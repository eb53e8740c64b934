#include "lmar/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "lmar/error.hpp"
#include "lmar/prompts.hpp"
#include "lmar/rng.hpp"
#include "lmar/structured.hpp"

namespace lmar::triplet {

std::vector<TripletCandidate> sample_triplet_candidates(const embedding::EmbeddingMatrix& index,
                                                        std::size_t candidate_k, std::size_t count,
                                                        std::uint64_t rng_seed) {
  const std::size_t n = index.n();
  if (n < 3) throw Error(ErrorCode::CorpusTooSmall, "triplet sampling needs at least 3 paragraphs, got " + std::to_string(n));
  if (candidate_k < 2) throw Error(ErrorCode::InvalidArgument, "candidate_k must be >= 2");
  const std::size_t k = std::min(candidate_k, n - 1);

  Rng rng(rng_seed);
  std::map<std::size_t, std::vector<embedding::Hit>> neighbours;
  std::set<std::tuple<ParaId, ParaId, ParaId>> seen;
  std::vector<TripletCandidate> out;
  out.reserve(count);

  for (std::size_t t = 0; t < count; ++t) {
    std::size_t anchor_pos = rng.uniform_index(n);
    ParaId anchor = index.row_id(anchor_pos);
    auto it = neighbours.find(anchor_pos);
    if (it == neighbours.end()) {
      ParaId excl[] = {anchor};
      it = neighbours.emplace(anchor_pos, embedding::top_k(index.row_vector(anchor_pos), index, k, excl)).first;
    }
    const auto& nb = it->second;
    std::size_t i1 = rng.uniform_index(nb.size());
    std::size_t i2 = rng.uniform_index(nb.size() - 1);
    if (i2 >= i1) ++i2;
    TripletCandidate c{anchor, nb[i1].id, nb[i2].id};
    auto key = std::make_tuple(anchor, std::min(c.cand1_id, c.cand2_id), std::max(c.cand1_id, c.cand2_id));
    if (seen.insert(key).second) out.push_back(c);
  }
  return out;
}

namespace {

const std::string& text_of(std::span<const std::string> texts, ParaId id) {
  if (id >= texts.size()) throw Error(ErrorCode::InvalidArgument, "no text for paragraph " + std::to_string(id));
  return texts[id];
}

}  // namespace

LabelOutcome label_triplet(llm::Gateway& gateway, const TripletCandidate& candidate,
                           std::span<const std::string> texts, const LabelOptions& options) {
  llm::ChatRequest req;
  req.model = options.model;
  req.temperature = options.temperature;
  req.system_prompt = std::string(prompts::kTripletLabeling);
  req.user_content = prompts::triplet_user(text_of(texts, candidate.anchor_id), text_of(texts, candidate.cand1_id),
                                           text_of(texts, candidate.cand2_id));

  for (int attempt = 0; attempt <= options.reprompts; ++attempt) {
    if (attempt > 0) req.user_content += "\n\nReply with the JSON object only.";
    auto resp = gateway.complete(options.stage, req);
    try {
      auto label = llm::parse_triplet_label(resp.content);
      switch (label.choice) {
        case llm::TripletLabel::Choice::First:
          return LabeledTriplet{candidate.anchor_id, candidate.cand1_id, candidate.cand2_id, label.reason, options.model};
        case llm::TripletLabel::Choice::Second:
          return LabeledTriplet{candidate.anchor_id, candidate.cand2_id, candidate.cand1_id, label.reason, options.model};
        case llm::TripletLabel::Choice::Ambiguous:
          return SkippedTriplet{candidate, "ambiguous"};
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ParseFailure) throw;
    }
  }
  return SkippedTriplet{candidate, "parse"};
}

LabelingResult label_all(llm::Gateway& gateway, std::span<const TripletCandidate> candidates,
                         std::span<const std::string> texts, const LabelOptions& options) {
  std::vector<std::optional<LabelOutcome>> outcomes(candidates.size());
  gateway.for_each(candidates.size(), [&](std::size_t i) {
    outcomes[i] = label_triplet(gateway, candidates[i], texts, options);
  });
  LabelingResult result;
  for (auto& o : outcomes) {
    if (auto* l = std::get_if<LabeledTriplet>(&*o))
      result.labeled.push_back(std::move(*l));
    else
      result.skipped.push_back(std::get<SkippedTriplet>(std::move(*o)));
  }
  return result;
}

std::pair<std::vector<LabeledTriplet>, std::vector<LabeledTriplet>> split_triplets(
    std::span<const LabeledTriplet> triplets, double val_fraction, std::uint64_t rng_seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "validation fraction must lie in (0, 1)");
  std::vector<std::size_t> order(triplets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(rng_seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(order.size())));
  if (order.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
  std::vector<char> is_val(order.size(), 0);
  for (std::size_t i = 0; i < n_val && i < order.size(); ++i) is_val[order[i]] = 1;
  std::pair<std::vector<LabeledTriplet>, std::vector<LabeledTriplet>> out;
  for (std::size_t i = 0; i < triplets.size(); ++i) (is_val[i] ? out.second : out.first).push_back(triplets[i]);
  return out;
}

std::string serialize_triplets(std::span<const LabeledTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets) {
    Json rec;
    rec["anchor_id"] = t.anchor_id;
    rec["positive_id"] = t.positive_id;
    rec["negative_id"] = t.negative_id;
    rec["reason"] = t.reason;
    rec["model"] = t.llm_model;
    out += to_jsonl_line(rec);
  }
  return out;
}

std::string serialize_skipped(std::span<const SkippedTriplet> skipped) {
  std::string out;
  for (const auto& s : skipped) {
    Json rec;
    rec["anchor_id"] = s.candidate.anchor_id;
    rec["cand1_id"] = s.candidate.cand1_id;
    rec["cand2_id"] = s.candidate.cand2_id;
    rec["why"] = s.why;
    out += to_jsonl_line(rec);
  }
  return out;
}

std::vector<LabeledTriplet> load_triplets(const std::filesystem::path& path) {
  std::vector<LabeledTriplet> out;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      out.push_back({rec.at("anchor_id").get<ParaId>(), rec.at("positive_id").get<ParaId>(),
                     rec.at("negative_id").get<ParaId>(), rec.value("reason", ""), rec.value("model", "")});
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

std::vector<SkippedTriplet> load_skipped(const std::filesystem::path& path) {
  std::vector<SkippedTriplet> out;
  for_each_jsonl(path, [&](std::size_t line, const Json& rec) {
    try {
      out.push_back({{rec.at("anchor_id").get<ParaId>(), rec.at("cand1_id").get<ParaId>(), rec.at("cand2_id").get<ParaId>()},
                     rec.value("why", "")});
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace lmar::triplet
