#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lmar/embedding.hpp"
#include "lmar/io.hpp"

namespace lmar::trainer {

using embedding::EmbeddingVector;

/// Linear map W (d_out x d_in, row-major) applied to frozen embeddings.
class AdapterParams {
 public:
  AdapterParams() = default;
  AdapterParams(std::size_t d_out, std::size_t d_in);

  /// Identity plus N(0, sigma^2) noise drawn row-major from Rng(seed).
  static AdapterParams identity(std::size_t d, double sigma = 0.0, std::uint64_t seed = 0);

  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }
  double& at(std::size_t r, std::size_t c) { return w_[r * d_in_ + c]; }
  double at(std::size_t r, std::size_t c) const { return w_[r * d_in_ + c]; }
  std::span<const double> row(std::size_t r) const { return {w_.data() + r * d_in_, d_in_}; }
  std::vector<double>& data() noexcept { return w_; }
  const std::vector<double>& data() const noexcept { return w_; }

  bool all_finite() const;

 private:
  std::size_t d_out_ = 0;
  std::size_t d_in_ = 0;
  std::vector<double> w_;
};

/// W v (no normalization). Throws DimMismatch.
std::vector<double> transform(const AdapterParams& params, std::span<const double> v);
/// normalize(W v).
EmbeddingVector apply_adapter(const AdapterParams& params, const EmbeddingVector& v);
/// Re-embeds every row of `index` through the adapter.
embedding::EmbeddingMatrix adapt_index(const AdapterParams& params, const embedding::EmbeddingMatrix& index);
/// normalize(mean_j normalize(W e_j)).
EmbeddingVector evidence_embedding(const AdapterParams& params, std::span<const EmbeddingVector> evidence);

double lp_distance(std::span<const double> x, std::span<const double> y, double norm_p);

/// max(d(a,p) - d(a,n) + margin, 0) with d the l_p distance.
double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p, const EmbeddingVector& n, double margin,
                    double norm_p = 2.0);

/// y = +1: s * (1 - cos(q, e)); y = -1: max(0, cos(q, e) - margin). s is
/// ignored for negatives.
double cosine_pair_loss(const EmbeddingVector& q, const EmbeddingVector& e, int y, double s, double margin);

struct LossGrad {
  double loss = 0.0;
  /// dLoss/dW, same layout as AdapterParams::data().
  std::vector<double> grad;
};

/// Loss on adapted, normalized vectors and its gradient w.r.t. W. The
/// gradient is exactly zero when the hinge is inactive.
LossGrad triplet_loss_grad(const AdapterParams& params, const EmbeddingVector& a, const EmbeddingVector& p,
                           const EmbeddingVector& n, double margin, double norm_p = 2.0);

/// Evidence side is the normalized mean of the adapted members.
LossGrad cosine_pair_loss_grad(const AdapterParams& params, const EmbeddingVector& q,
                               std::span<const EmbeddingVector> evidence, int y, double s, double margin);

struct TrainConfig {
  double triplet_lr = 1e-5;
  double qe_lr = 1e-6;
  std::size_t batch_size = 32;
  double triplet_margin = 1.0;
  double cosine_margin = 0.0;
  double norm_p = 2.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  double init_sigma = 1e-3;
  std::uint64_t rng_seed = 0;

  void validate() const;
  Json to_json() const;
};

struct TripletExample {
  EmbeddingVector anchor, positive, negative;
};

struct PairExample {
  EmbeddingVector question;
  std::vector<EmbeddingVector> evidence;
  int y = 1;
  double s = 1.0;
};

struct TripletDataset {
  std::vector<TripletExample> train, val;
};

struct PairDataset {
  std::vector<PairExample> train, val;
};

struct EpochLoss {
  std::size_t epoch;
  double train_loss;
  double val_loss;
};

struct TrainReport {
  std::string stage;
  double initial_val_loss = 0.0;
  std::vector<EpochLoss> epochs;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  /// "early_stopping" or "max_epochs".
  std::string stop_reason;

  Json to_json() const;
  static TrainReport from_json(const Json& j);
};

struct TrainResult {
  AdapterParams params;
  TrainReport report;
};

/// Mini-batch AdamW (decoupled weight decay) over the dataset. Epoch 0 is
/// the starting point; training stops once validation loss has not improved
/// for `patience` epochs, and the best-validation parameters are returned.
TrainResult train_stage(const TripletDataset& data, const TrainConfig& config, const AdapterParams& init);
TrainResult train_stage(const PairDataset& data, const TrainConfig& config, const AdapterParams& init);

double mean_loss(const AdapterParams& params, std::span<const TripletExample> data, const TrainConfig& config);
double mean_loss(const AdapterParams& params, std::span<const PairExample> data, const TrainConfig& config);

/// Fraction of triplets with d(a, p) < d(a, n) after adaptation.
double triplet_order_rate(const AdapterParams& params, std::span<const TripletExample> data, double norm_p = 2.0);

/// Binary: "LMAD", u32 version=1, u32 d_in, u32 d_out, d_out*d_in
/// little-endian f64, then a JSON trailer to end of file.
void save_checkpoint(const AdapterParams& params, const Json& trailer, const std::filesystem::path& path);
struct Checkpoint {
  AdapterParams params;
  Json trailer;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lmar::trainer
