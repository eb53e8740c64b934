#include "lmar/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "lmar/error.hpp"
#include "lmar/rng.hpp"
#include "lmar/simd.hpp"

namespace lmar::trainer {

AdapterParams::AdapterParams(std::size_t d_out, std::size_t d_in) : d_out_(d_out), d_in_(d_in), w_(d_out * d_in, 0.0) {}

AdapterParams AdapterParams::identity(std::size_t d, double sigma, std::uint64_t seed) {
  AdapterParams p(d, d);
  Rng rng(seed);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) p.at(r, c) = (r == c ? 1.0 : 0.0) + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
  return p;
}

bool AdapterParams::all_finite() const {
  return std::all_of(w_.begin(), w_.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> transform(const AdapterParams& params, std::span<const double> v) {
  if (v.size() != params.d_in())
    throw Error(ErrorCode::DimMismatch, "adapter expects dim " + std::to_string(params.d_in()) + ", got " +
                                            std::to_string(v.size()));
  std::vector<double> out(params.d_out());
  for (std::size_t r = 0; r < params.d_out(); ++r) out[r] = simd::dot(params.row(r), v);
  return out;
}

EmbeddingVector apply_adapter(const AdapterParams& params, const EmbeddingVector& v) {
  return embedding::normalize(EmbeddingVector(transform(params, v.view())));
}

embedding::EmbeddingMatrix adapt_index(const AdapterParams& params, const embedding::EmbeddingMatrix& index) {
  std::vector<EmbeddingVector> rows;
  rows.reserve(index.n());
  for (std::size_t i = 0; i < index.n(); ++i) rows.push_back(apply_adapter(params, index.row_vector(i)));
  return embedding::EmbeddingMatrix::from_vectors(rows, index.row_ids());
}

namespace {

struct Adapted {
  std::vector<double> unit;  // normalize(W x)
  double norm;               // ||W x||
};

Adapted adapt(const AdapterParams& params, std::span<const double> x) {
  Adapted a{transform(params, x), 0.0};
  a.norm = std::sqrt(simd::dot(std::span<const double>(a.unit), std::span<const double>(a.unit)));
  if (!(a.norm > 0.0)) throw Error(ErrorCode::ZeroVector, "adapter maps input to the zero vector");
  for (auto& v : a.unit) v /= a.norm;
  return a;
}

// Pulls dL/dy through y = u/||u||, then accumulates (dL/du) x^T into grad.
void backprop_normalized(const Adapted& y, std::span<const double> g_y, std::span<const double> x,
                         std::vector<double>& grad) {
  const std::size_t d_out = y.unit.size();
  const std::size_t d_in = x.size();
  double proj = simd::dot(std::span<const double>(y.unit), g_y);
  for (std::size_t r = 0; r < d_out; ++r) {
    double g_u = (g_y[r] - y.unit[r] * proj) / y.norm;
    if (g_u != 0.0) simd::axpy(g_u, x, std::span<double>(grad.data() + r * d_in, d_in));
  }
}

// Gradient of ||z||_p with respect to z.
std::vector<double> lp_norm_grad(std::span<const double> z, double dist, double norm_p) {
  std::vector<double> g(z.size(), 0.0);
  if (!(dist > 0.0)) return g;
  if (norm_p == 2.0) {
    for (std::size_t i = 0; i < z.size(); ++i) g[i] = z[i] / dist;
  } else {
    double scale = std::pow(dist, norm_p - 1.0);
    for (std::size_t i = 0; i < z.size(); ++i)
      g[i] = (z[i] > 0 ? 1.0 : (z[i] < 0 ? -1.0 : 0.0)) * std::pow(std::abs(z[i]), norm_p - 1.0) / scale;
  }
  return g;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

void require_dims(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::DimMismatch, "dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
}

}  // namespace

double lp_distance(std::span<const double> x, std::span<const double> y, double norm_p) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimMismatch, "distance between different dims");
  if (norm_p == 2.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(std::abs(x[i] - y[i]), norm_p);
  return std::pow(s, 1.0 / norm_p);
}

double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p, const EmbeddingVector& n, double margin,
                    double norm_p) {
  require_dims(a, p);
  require_dims(a, n);
  return std::max(lp_distance(a.view(), p.view(), norm_p) - lp_distance(a.view(), n.view(), norm_p) + margin, 0.0);
}

double cosine_pair_loss(const EmbeddingVector& q, const EmbeddingVector& e, int y, double s, double margin) {
  double c = embedding::cosine_similarity(q, e);
  if (y == 1) return s * (1.0 - c);
  if (y == -1) return std::max(0.0, c - margin);
  throw Error(ErrorCode::InvalidArgument, "pair label must be +1 or -1");
}

LossGrad triplet_loss_grad(const AdapterParams& params, const EmbeddingVector& a, const EmbeddingVector& p,
                           const EmbeddingVector& n, double margin, double norm_p) {
  require_dims(a, p);
  require_dims(a, n);
  LossGrad out;
  out.grad.assign(params.data().size(), 0.0);
  auto ya = adapt(params, a.view());
  auto yp = adapt(params, p.view());
  auto yn = adapt(params, n.view());
  auto zap = diff(ya.unit, yp.unit);
  auto zan = diff(ya.unit, yn.unit);
  double dap = lp_distance(ya.unit, yp.unit, norm_p);
  double dan = lp_distance(ya.unit, yn.unit, norm_p);
  double raw = dap - dan + margin;
  if (!(raw > 0.0)) return out;
  out.loss = raw;

  auto g_ap = lp_norm_grad(zap, dap, norm_p);
  auto g_an = lp_norm_grad(zan, dan, norm_p);
  std::vector<double> g_a(g_ap.size()), g_p(g_ap.size()), g_n(g_ap.size());
  for (std::size_t i = 0; i < g_ap.size(); ++i) {
    g_a[i] = g_ap[i] - g_an[i];
    g_p[i] = -g_ap[i];
    g_n[i] = g_an[i];
  }
  backprop_normalized(ya, g_a, a.view(), out.grad);
  backprop_normalized(yp, g_p, p.view(), out.grad);
  backprop_normalized(yn, g_n, n.view(), out.grad);
  return out;
}

EmbeddingVector evidence_embedding(const AdapterParams& params, std::span<const EmbeddingVector> evidence) {
  if (evidence.empty()) throw Error(ErrorCode::InvalidArgument, "evidence set is empty");
  std::vector<double> mean(params.d_out(), 0.0);
  for (const auto& e : evidence) {
    auto y = adapt(params, e.view());
    simd::axpy(1.0 / static_cast<double>(evidence.size()), y.unit, mean);
  }
  return embedding::normalize(EmbeddingVector(std::move(mean)));
}

LossGrad cosine_pair_loss_grad(const AdapterParams& params, const EmbeddingVector& q,
                               std::span<const EmbeddingVector> evidence, int y, double s, double margin) {
  if (y != 1 && y != -1) throw Error(ErrorCode::InvalidArgument, "pair label must be +1 or -1");
  if (evidence.empty()) throw Error(ErrorCode::InvalidArgument, "evidence set is empty");
  LossGrad out;
  out.grad.assign(params.data().size(), 0.0);

  auto yq = adapt(params, q.view());
  std::vector<Adapted> ye;
  ye.reserve(evidence.size());
  const double inv_k = 1.0 / static_cast<double>(evidence.size());
  Adapted m{std::vector<double>(params.d_out(), 0.0), 0.0};
  for (const auto& e : evidence) {
    require_dims(q, e);
    ye.push_back(adapt(params, e.view()));
    simd::axpy(inv_k, ye.back().unit, m.unit);
  }
  m.norm = std::sqrt(simd::dot(std::span<const double>(m.unit), std::span<const double>(m.unit)));
  if (!(m.norm > 0.0)) throw Error(ErrorCode::ZeroVector, "evidence embeddings cancel out");
  for (auto& v : m.unit) v /= m.norm;

  double c = simd::dot(std::span<const double>(yq.unit), std::span<const double>(m.unit));
  double dl_dc;
  if (y == 1) {
    out.loss = s * (1.0 - c);
    if (s == 0.0) return out;
    dl_dc = -s;
  } else {
    if (!(c > margin)) return out;
    out.loss = c - margin;
    dl_dc = 1.0;
  }

  std::vector<double> g_q(m.unit.size()), g_e(m.unit.size());
  for (std::size_t i = 0; i < g_q.size(); ++i) {
    g_q[i] = dl_dc * m.unit[i];
    g_e[i] = dl_dc * yq.unit[i];
  }
  backprop_normalized(yq, g_q, q.view(), out.grad);

  // Through e = m / ||m||, then m = mean_j y_j.
  double proj = simd::dot(std::span<const double>(m.unit), std::span<const double>(g_e));
  std::vector<double> g_y(g_e.size());
  for (std::size_t i = 0; i < g_y.size(); ++i) g_y[i] = (g_e[i] - m.unit[i] * proj) / m.norm * inv_k;
  for (std::size_t j = 0; j < evidence.size(); ++j) backprop_normalized(ye[j], g_y, evidence[j].view(), out.grad);
  return out;
}

void TrainConfig::validate() const {
  if (!(triplet_lr > 0.0) || !(qe_lr > 0.0)) throw Error(ErrorCode::ConfigError, "learning rates must be > 0");
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (patience < 1) throw Error(ErrorCode::ConfigError, "patience must be >= 1");
  if (!(norm_p >= 1.0)) throw Error(ErrorCode::ConfigError, "norm_p must be >= 1");
  if (weight_decay < 0.0) throw Error(ErrorCode::ConfigError, "weight_decay must be >= 0");
}

Json TrainConfig::to_json() const {
  Json j;
  j["triplet_lr"] = triplet_lr;
  j["qe_lr"] = qe_lr;
  j["batch_size"] = batch_size;
  j["triplet_margin"] = triplet_margin;
  j["cosine_margin"] = cosine_margin;
  j["norm_p"] = norm_p;
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["init_sigma"] = init_sigma;
  j["rng_seed"] = rng_seed;
  return j;
}

Json TrainReport::to_json() const {
  Json j;
  j["stage"] = stage;
  j["initial_val_loss"] = initial_val_loss;
  j["epochs"] = Json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  j["best_epoch"] = best_epoch;
  j["stop_epoch"] = stop_epoch;
  j["stop_reason"] = stop_reason;
  return j;
}

TrainReport TrainReport::from_json(const Json& j) {
  TrainReport r;
  r.stage = j.at("stage").get<std::string>();
  r.initial_val_loss = j.at("initial_val_loss").get<double>();
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>()});
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.stop_epoch = j.at("stop_epoch").get<std::size_t>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  return r;
}

double mean_loss(const AdapterParams& params, std::span<const TripletExample> data, const TrainConfig& config) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : data)
    total += triplet_loss(apply_adapter(params, t.anchor), apply_adapter(params, t.positive),
                          apply_adapter(params, t.negative), config.triplet_margin, config.norm_p);
  return total / static_cast<double>(data.size());
}

double mean_loss(const AdapterParams& params, std::span<const PairExample> data, const TrainConfig& config) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : data)
    total += cosine_pair_loss(apply_adapter(params, p.question), evidence_embedding(params, p.evidence), p.y, p.s,
                              config.cosine_margin);
  return total / static_cast<double>(data.size());
}

double triplet_order_rate(const AdapterParams& params, std::span<const TripletExample> data, double norm_p) {
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& t : data) {
    auto a = apply_adapter(params, t.anchor);
    if (lp_distance(a.view(), apply_adapter(params, t.positive).view(), norm_p) <
        lp_distance(a.view(), apply_adapter(params, t.negative).view(), norm_p))
      ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

namespace {

class AdamW {
 public:
  AdamW(std::size_t size, double lr, const TrainConfig& c) : lr_(lr), cfg_(c), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& w, const std::vector<double>& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - lr_ * cfg_.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.adam_eps);
    }
  }

 private:
  double lr_;
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

template <typename Example, typename LossGradFn>
TrainResult run(const std::string& stage, const std::vector<Example>& train, const std::vector<Example>& val,
                double lr, const TrainConfig& config, const AdapterParams& init, LossGradFn loss_grad) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, stage + " stage has no training examples");
  if (val.empty()) throw Error(ErrorCode::EmptyDataset, stage + " stage has no validation examples");

  TrainResult result{init, {}};
  result.report.stage = stage;
  AdapterParams params = init;
  // Non-finite weights surface as normalization failures; report them as divergence.
  auto diverged = [&](std::size_t epoch) {
    return Error(ErrorCode::DivergenceDetected,
                 stage + (epoch == 0 ? " loss is not finite before training" : " diverged at epoch " + std::to_string(epoch)));
  };
  auto checked = [&](std::size_t epoch, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ZeroVector && !params.all_finite()) throw diverged(epoch);
      throw;
    }
  };
  double best_val = checked(0, [&] { return mean_loss(params, std::span<const Example>(val), config); });
  if (!std::isfinite(best_val) || !params.all_finite()) throw diverged(0);
  result.report.initial_val_loss = best_val;
  result.report.stop_reason = "max_epochs";

  AdamW opt(params.data().size(), lr, config);
  Rng rng(derive_seed(config.rng_seed, stage == "triplet" ? 1 : 2));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(params.data().size());
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double train_total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::size_t e = std::min(order.size(), b + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        LossGrad lg = checked(epoch, [&] { return loss_grad(params, train[order[i]]); });
        train_total += lg.loss;
        simd::axpy(inv, lg.grad, grad);
      }
      opt.step(params.data(), grad);
    }
    double val_loss = checked(epoch, [&] { return mean_loss(params, std::span<const Example>(val), config); });
    if (!std::isfinite(val_loss) || !params.all_finite()) throw diverged(epoch);
    result.report.epochs.push_back({epoch, train_total / static_cast<double>(train.size()), val_loss});
    result.report.stop_epoch = epoch;
    if (val_loss < best_val) {
      best_val = val_loss;
      result.params = params;
      result.report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.report.stop_reason = "early_stopping";
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult train_stage(const TripletDataset& data, const TrainConfig& config, const AdapterParams& init) {
  return run("triplet", data.train, data.val, config.triplet_lr, config, init,
             [&](const AdapterParams& p, const TripletExample& t) {
               return triplet_loss_grad(p, t.anchor, t.positive, t.negative, config.triplet_margin, config.norm_p);
             });
}

TrainResult train_stage(const PairDataset& data, const TrainConfig& config, const AdapterParams& init) {
  return run("qe", data.train, data.val, config.qe_lr, config, init, [&](const AdapterParams& p, const PairExample& x) {
    return cosine_pair_loss_grad(p, x.question, x.evidence, x.y, x.s, config.cosine_margin);
  });
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(in[off + i])} << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const AdapterParams& params, const Json& trailer, const std::filesystem::path& path) {
  std::string out = "LMAD";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(params.d_in()));
  put_u32(out, static_cast<std::uint32_t>(params.d_out()));
  for (double x : params.data()) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  out += trailer.dump();
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string in = read_file(path);
  if (in.size() < 16 || in.compare(0, 4, "LMAD") != 0)
    throw Error(ErrorCode::MalformedRecord, path.string() + " is not an adapter checkpoint");
  if (get_u32(in, 4) != 1) throw Error(ErrorCode::MalformedRecord, "unsupported checkpoint version");
  std::size_t d_in = get_u32(in, 8), d_out = get_u32(in, 12);
  std::size_t body = 16 + d_in * d_out * 8;
  if (in.size() < body) throw Error(ErrorCode::MalformedRecord, path.string() + " is truncated");
  Checkpoint ck{AdapterParams(d_out, d_in), Json::object()};
  for (std::size_t i = 0; i < d_in * d_out; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(in[16 + i * 8 + b])} << (8 * b);
    ck.params.data()[i] = std::bit_cast<double>(bits);
  }
  if (in.size() > body) {
    ck.trailer = Json::parse(in.substr(body), nullptr, false);
    if (ck.trailer.is_discarded()) throw Error(ErrorCode::MalformedRecord, path.string() + " has a bad JSON trailer");
  }
  return ck;
}

}  // namespace lmar::trainer
