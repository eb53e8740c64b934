#include <cmath>
#include <cstring>
#include <functional>

#include "doctest.h"
#include "lmar/error.hpp"
#include "lmar/trainer.hpp"
#include "support.hpp"

using namespace lmar;
using namespace lmar::trainer;

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

EmbeddingVector unit(Rng& rng, std::size_t d) { return embedding::normalize(EmbeddingVector(testing::gaussian(rng, d))); }

// Two clusters of directions; positives share the anchor's cluster.
TripletDataset planted_triplets(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto c0 = unit(rng, d), c1 = unit(rng, d);
  auto near = [&](const EmbeddingVector& c) {
    auto v = c.components;
    for (auto& x : v) x += 0.9 * rng.normal();
    return embedding::normalize(EmbeddingVector(v));
  };
  TripletDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    bool flip = i % 2;
    const auto& a = flip ? c1 : c0;
    const auto& b = flip ? c0 : c1;
    (i % 4 == 0 ? ds.val : ds.train).push_back({near(a), near(a), near(b)});
  }
  return ds;
}

}  // namespace

TEST_CASE("adapter transform") {
  auto id = AdapterParams::identity(3);
  std::vector<double> v{1.0, -2.0, 0.5};
  CHECK(transform(id, v) == v);

  auto twice = AdapterParams::identity(3);
  for (std::size_t i = 0; i < 3; ++i) twice.at(i, i) = 2.0;
  auto scaled = apply_adapter(twice, EmbeddingVector(v));
  auto plain = embedding::normalize(EmbeddingVector(v));
  for (std::size_t i = 0; i < 3; ++i) CHECK(scaled.components[i] == doctest::Approx(plain.components[i]).epsilon(1e-12));

  AdapterParams w(2, 3);
  double vals[2][3] = {{1, 2, 3}, {-1, 0, 4}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) w.at(r, c) = vals[r][c];
  auto out = transform(w, v);
  CHECK(out == std::vector<double>{1 - 4 + 1.5, -1 + 0 + 2});
  CHECK(code_of([&] { transform(w, std::vector<double>{1.0, 2.0}); }) == ErrorCode::DimMismatch);

  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::size_t din = 1 + rng.uniform_index(20), dout = 1 + rng.uniform_index(20);
    AdapterParams p(dout, din);
    for (auto& x : p.data()) x = rng.normal();
    auto x = testing::gaussian(rng, din);
    auto y = transform(p, x);
    for (std::size_t r = 0; r < dout; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < din; ++c) s += p.at(r, c) * x[c];
      CHECK(std::abs(y[r] - s) <= 1e-12 * (1 + std::abs(s)));
    }
  }
}

TEST_CASE("identity adapter leaves the index unchanged") {
  auto m = testing::planted_matrix(30, 8, 3, 0.5, 6);
  auto adapted = adapt_index(AdapterParams::identity(8), m);
  CHECK(adapted.row_ids() == m.row_ids());
  for (std::size_t i = 0; i < m.storage().size(); ++i)
    CHECK(std::abs(adapted.storage()[i] - m.storage()[i]) <= 1e-6f);
}

TEST_CASE("loss examples") {
  EmbeddingVector a({0.0, 0.0}), p({1.0, 0.0}), n({0.5, 0.0});
  CHECK(triplet_loss(a, p, n, 0.0) == doctest::Approx(0.5));
  CHECK(triplet_loss(a, n, p, 0.0) == 0.0);
  CHECK(triplet_loss(a, n, p, 1.0) == doctest::Approx(0.5));
  CHECK(lp_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}, 1.0) == doctest::Approx(7.0));
  CHECK(lp_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}, 2.0) == doctest::Approx(5.0));

  EmbeddingVector q({1.0, 0.0}), e({0.6, 0.8});
  CHECK(cosine_pair_loss(q, e, 1, 1.0, 0.0) == doctest::Approx(0.4));
  CHECK(cosine_pair_loss(q, e, 1, 0.5, 0.0) == doctest::Approx(0.2));
  CHECK(cosine_pair_loss(q, e, -1, 1.0, 0.0) == doctest::Approx(0.6));
  CHECK(cosine_pair_loss(q, e, -1, 0.3, 0.1) == doctest::Approx(0.5));
  CHECK(cosine_pair_loss(q, EmbeddingVector({0.0, 1.0}), -1, 1.0, 0.0) == 0.0);
  CHECK(cosine_pair_loss(q, q, 1, 1.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("gradient step descends and s scales only positives") {
  Rng rng(12);
  const std::size_t d = 6;
  auto params = AdapterParams::identity(d, 0.1, 3);
  auto a = unit(rng, d), p = unit(rng, d), n = unit(rng, d);
  auto lg = triplet_loss_grad(params, a, p, n, 2.0);
  REQUIRE(lg.loss > 0);
  auto stepped = params;
  for (std::size_t i = 0; i < lg.grad.size(); ++i) stepped.data()[i] -= 1e-4 * lg.grad[i];
  CHECK(triplet_loss_grad(stepped, a, p, n, 2.0).loss < lg.loss);

  std::vector<EmbeddingVector> ev{unit(rng, d), unit(rng, d)};
  auto pos1 = cosine_pair_loss_grad(params, a, ev, 1, 1.0, 0.0);
  auto pos2 = cosine_pair_loss_grad(params, a, ev, 1, 0.5, 0.0);
  CHECK(pos2.loss == doctest::Approx(0.5 * pos1.loss));
  for (std::size_t i = 0; i < pos1.grad.size(); ++i) CHECK(pos2.grad[i] == doctest::Approx(0.5 * pos1.grad[i]));
  auto neg1 = cosine_pair_loss_grad(params, a, ev, -1, 1.0, -1.0);
  auto neg2 = cosine_pair_loss_grad(params, a, ev, -1, 0.2, -1.0);
  CHECK(neg1.loss == neg2.loss);
  CHECK(neg1.grad == neg2.grad);

  // Inactive hinge: exactly zero gradient.
  auto easy = triplet_loss_grad(params, a, a, EmbeddingVector(std::vector<double>(d, 0.0) = [&] {
                                  auto v = a.components;
                                  for (auto& x : v) x = -x;
                                  return v;
                                }()), 0.5);
  CHECK(easy.loss == 0.0);
  for (double g : easy.grad) CHECK(g == 0.0);
}

TEST_CASE("training reduces validation loss and is deterministic") {
  auto ds = planted_triplets(8, 200, 4);
  TrainConfig cfg;
  cfg.triplet_lr = 1e-2;
  cfg.max_epochs = 15;
  cfg.rng_seed = 7;
  auto init = AdapterParams::identity(8, cfg.init_sigma, 1);
  auto r = train_stage(ds, cfg, init);
  CHECK(mean_loss(r.params, ds.val, cfg) <= r.report.initial_val_loss);
  CHECK(r.report.initial_val_loss == mean_loss(init, ds.val, cfg));
  if (r.report.best_epoch > 0)
    CHECK(mean_loss(r.params, ds.val, cfg) == r.report.epochs[r.report.best_epoch - 1].val_loss);
  CHECK(triplet_order_rate(r.params, ds.val) >= triplet_order_rate(init, ds.val));

  auto again = train_stage(ds, cfg, init);
  CHECK(std::memcmp(again.params.data().data(), r.params.data().data(), r.params.data().size() * sizeof(double)) == 0);
  CHECK(again.report.to_json() == r.report.to_json());
  CHECK(TrainReport::from_json(r.report.to_json()).to_json() == r.report.to_json());
}

TEST_CASE("a fixed point stops within patience") {
  // Steps far below double resolution and no decay: the loss cannot improve.
  auto ds = planted_triplets(4, 40, 2);
  TrainConfig cfg;
  cfg.triplet_lr = 1e-300;
  cfg.weight_decay = 0.0;
  cfg.patience = 3;
  cfg.max_epochs = 30;
  auto r = train_stage(ds, cfg, AdapterParams::identity(4));
  CHECK(r.report.stop_reason == "early_stopping");
  CHECK(r.report.stop_epoch == 3);
  CHECK(r.report.best_epoch == 0);
  CHECK(r.params.data() == AdapterParams::identity(4).data());
  cfg.triplet_lr = 0.0;
  CHECK(code_of([&] { train_stage(ds, cfg, AdapterParams::identity(4)); }) == ErrorCode::ConfigError);
  cfg.triplet_lr = 1e-300;

  cfg.max_epochs = 2;
  CHECK(train_stage(ds, cfg, AdapterParams::identity(4)).report.stop_reason == "max_epochs");
}

TEST_CASE("pair training") {
  Rng rng(5);
  PairDataset ds;
  for (int i = 0; i < 40; ++i) {
    PairExample ex;
    ex.question = unit(rng, 6);
    ex.evidence = {unit(rng, 6), unit(rng, 6)};
    ex.y = i % 3 == 0 ? -1 : 1;
    ex.s = 0.8;
    (i % 5 == 0 ? ds.val : ds.train).push_back(ex);
  }
  TrainConfig cfg;
  cfg.qe_lr = 1e-2;
  cfg.max_epochs = 5;
  auto r = train_stage(ds, cfg, AdapterParams::identity(6));
  CHECK(r.report.stage == "qe");
  CHECK(mean_loss(r.params, ds.val, cfg) <= r.report.initial_val_loss);
}

TEST_CASE("trainer errors") {
  TrainConfig cfg;
  TripletDataset empty;
  CHECK(code_of([&] { train_stage(empty, cfg, AdapterParams::identity(2)); }) == ErrorCode::EmptyDataset);
  auto ds = planted_triplets(4, 40, 2);
  ds.val.clear();
  CHECK(code_of([&] { train_stage(ds, cfg, AdapterParams::identity(4)); }) == ErrorCode::EmptyDataset);

  auto big = planted_triplets(4, 40, 2);
  auto w = AdapterParams::identity(4);
  w.at(1, 2) = std::nan("");
  CHECK(code_of([&] { train_stage(big, cfg, w); }) == ErrorCode::DivergenceDetected);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto p = AdapterParams::identity(5, 0.3, 9);
  auto dir = testing::scratch("trainer_ckpt");
  Json trailer{{"stage", "qe"}, {"epochs", 3}};
  save_checkpoint(p, trailer, dir / "a.lmad");
  auto back = load_checkpoint(dir / "a.lmad");
  CHECK(back.trailer == trailer);
  CHECK(back.params.d_in() == 5);
  CHECK(std::memcmp(back.params.data().data(), p.data().data(), p.data().size() * sizeof(double)) == 0);
  auto bytes = read_file(dir / "a.lmad");
  CHECK(bytes.substr(0, 4) == "LMAD");
  write_file(dir / "bad.lmad", bytes.substr(0, 20));
  CHECK(code_of([&] { load_checkpoint(dir / "bad.lmad"); }) == ErrorCode::MalformedRecord);
}
