#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lmar/embedding.hpp"
#include "lmar/llm_gateway.hpp"

namespace lmar::triplet {

struct TripletCandidate {
  ParaId anchor_id;
  ParaId cand1_id;
  ParaId cand2_id;

  friend bool operator==(const TripletCandidate&, const TripletCandidate&) = default;
};

struct LabeledTriplet {
  ParaId anchor_id;
  ParaId positive_id;
  ParaId negative_id;
  std::string reason;
  std::string llm_model;
};

struct SkippedTriplet {
  TripletCandidate candidate;
  /// "ambiguous" (validator returned Error) or "parse" (unreadable twice).
  std::string why;
};

using LabelOutcome = std::variant<LabeledTriplet, SkippedTriplet>;

/// For each of `count` draws: anchor row = uniform_index(n); the two
/// candidates are drawn without replacement from the anchor's
/// top-candidate_k neighbours (anchor excluded; k clamped to n-1) by
/// uniform_index(k) then uniform_index(k-1) (second index shifted past the
/// first). Repeated (anchor, {c1, c2}) sets are dropped, first one kept.
std::vector<TripletCandidate> sample_triplet_candidates(const embedding::EmbeddingMatrix& index,
                                                        std::size_t candidate_k, std::size_t count,
                                                        std::uint64_t rng_seed);

struct LabelOptions {
  std::string model;
  double temperature = 0.0;
  std::string stage = "triplets";
  /// Extra attempts after an unreadable response.
  int reprompts = 1;
};

/// `texts` is indexed by para id.
LabelOutcome label_triplet(llm::Gateway& gateway, const TripletCandidate& candidate,
                           std::span<const std::string> texts, const LabelOptions& options = {});

struct LabelingResult {
  std::vector<LabeledTriplet> labeled;
  std::vector<SkippedTriplet> skipped;

  double skip_rate() const {
    auto total = labeled.size() + skipped.size();
    return total == 0 ? 0.0 : static_cast<double>(skipped.size()) / static_cast<double>(total);
  }
};

/// Labels every candidate under the gateway's parallelism bound; output
/// order follows candidate order.
LabelingResult label_all(llm::Gateway& gateway, std::span<const TripletCandidate> candidates,
                         std::span<const std::string> texts, const LabelOptions& options = {});

/// Seeded split; `val_fraction` of triplets (rounded, at least one when
/// there are two or more) go to validation.
std::pair<std::vector<LabeledTriplet>, std::vector<LabeledTriplet>> split_triplets(
    std::span<const LabeledTriplet> triplets, double val_fraction, std::uint64_t rng_seed);

std::string serialize_triplets(std::span<const LabeledTriplet> triplets);
std::string serialize_skipped(std::span<const SkippedTriplet> skipped);
std::vector<LabeledTriplet> load_triplets(const std::filesystem::path& path);
std::vector<SkippedTriplet> load_skipped(const std::filesystem::path& path);

}  // namespace lmar::triplet
