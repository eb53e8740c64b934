#include <cmath>
#include <cstring>
#include <functional>
#include <mutex>

#include "doctest.h"
#include "lmar/embedding.hpp"
#include "lmar/error.hpp"
#include "lmar/simd.hpp"
#include "http_stub.hpp"
#include "support.hpp"

using namespace lmar;
using namespace lmar::embedding;

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

std::vector<Hit> brute_force(const EmbeddingVector& q, const EmbeddingMatrix& m) {
  auto qn = normalize(q);
  std::vector<Hit> all;
  for (std::size_t i = 0; i < m.n(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < m.d(); ++j) s += qn.components[j] * static_cast<double>(m.row(i)[j]);
    all.push_back({m.row_id(i), s});
  }
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  });
  return all;
}

}  // namespace

TEST_CASE("normalize") {
  auto v = normalize(EmbeddingVector({3.0, 4.0}));
  CHECK(v.components[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(v.components[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(v.is_unit);
  auto w = normalize(v);
  CHECK(std::abs(w.components[0] - v.components[0]) < 1e-9);
  CHECK(code_of([] { normalize(EmbeddingVector({0.0, 0.0})); }) == ErrorCode::ZeroVector);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EmbeddingVector x(testing::gaussian(rng, 1 + rng.uniform_index(64)));
    auto once = normalize(x), twice = normalize(once);
    for (std::size_t j = 0; j < x.dim(); ++j) CHECK(std::abs(once.components[j] - twice.components[j]) < 1e-9);
    CHECK(cosine_similarity(x, once) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("cosine_similarity") {
  EmbeddingVector a({1.0, 0.0}), b({0.0, 1.0}), c({1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)});
  CHECK(cosine_similarity(a, a) == 1.0);
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(cosine_similarity(c, a) == cosine_similarity(a, c));
  CHECK(code_of([&] { cosine_similarity(a, EmbeddingVector({1.0, 2.0, 3.0})); }) == ErrorCode::DimMismatch);
  CHECK(code_of([&] { cosine_similarity(a, EmbeddingVector({0.0, 0.0})); }) == ErrorCode::ZeroVector);
}

TEST_CASE("stub provider") {
  StubEmbeddingProvider stub(64);
  auto x1 = stub.embed_one("abc"), x2 = stub.embed_one("abc");
  CHECK(x1.components == x2.components);
  std::vector<std::string> three{"one", "two", "three"};
  auto out = stub.embed(three);
  REQUIRE(out.size() == 3);
  for (const auto& v : out) CHECK(v.dim() == 64);

  StubEmbeddingProvider big(256);
  auto a = big.embed_one("ultrasound fracture");
  auto b = big.embed_one("ultrasound fractures");
  auto c = big.embed_one("stock market");
  CHECK(cosine_similarity(a, b) > cosine_similarity(a, c));
  // Whitespace-insensitive and case-insensitive.
  CHECK(big.embed_one("Stock   Market").components == c.components);
}

TEST_CASE("embed_batch validation") {
  ProviderConfig cfg;
  cfg.kind = ProviderKind::Stub;
  cfg.dim = 16;
  std::vector<std::string> none;
  CHECK(code_of([&] { embed_batch(cfg, none); }) == ErrorCode::InvalidArgument);
  std::vector<std::string> has_empty{"a", ""};
  CHECK(code_of([&] { embed_batch(cfg, has_empty); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("top_k matches brute force") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    std::size_t n = 1 + rng.uniform_index(1000), d = 1 + rng.uniform_index(64);
    auto m = testing::planted_matrix(n, d, trial % 2 ? 0 : 3, 0.5, rng.next());
    EmbeddingVector q(testing::gaussian(rng, d));
    std::size_t k = 1 + rng.uniform_index(n + 2);
    auto got = top_k(q, m, k);
    auto want = brute_force(q, m);
    REQUIRE(got.size() == std::min(k, n));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i].similarity - want[i].similarity) < 1e-9);
      if (std::abs(got[i].similarity - want[i].similarity) < 1e-12) CHECK(got[i].id == want[i].id);
    }
  }
}

TEST_CASE("top_k contracts") {
  auto m = testing::planted_matrix(5, 4, 0, 1.0, 9);
  auto q = m.row_vector(2);
  auto full = top_k(q, m, 5);
  std::vector<ParaId> ids;
  for (auto& h : full) ids.push_back(h.id);
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<ParaId>{0, 1, 2, 3, 4});
  CHECK(full[0].id == 2);
  std::vector<ParaId> ex{2};
  auto without = top_k(q, m, 5, ex);
  CHECK(without.size() == 4);
  for (auto& h : without) CHECK(h.id != 2);

  // Ties break by ascending id.
  std::vector<EmbeddingVector> same(4, EmbeddingVector({1.0, 1.0}));
  auto tied = EmbeddingMatrix::from_vectors(same, {7, 3, 9, 1});
  auto r = top_k(EmbeddingVector({1.0, 1.0}), tied, 4);
  CHECK(r[0].id == 1);
  CHECK(r[1].id == 3);
  CHECK(r[3].id == 9);

  CHECK(code_of([] { top_k(EmbeddingVector({1.0}), EmbeddingMatrix{}, 3); }) == ErrorCode::EmptyIndex);
}

TEST_CASE("matrix file round-trips bit-exactly") {
  auto m = testing::planted_matrix(37, 13, 2, 0.7, 21);
  auto dir = testing::scratch("embedding_roundtrip");
  save_matrix(m, dir / "e.bin", "stub:test");
  auto back = load_matrix(dir / "e.bin");
  CHECK(back.fingerprint == "stub:test");
  CHECK(back.matrix.n() == 37);
  CHECK(back.matrix.d() == 13);
  CHECK(std::memcmp(back.matrix.storage().data(), m.storage().data(), m.storage().size() * sizeof(float)) == 0);
  CHECK(back.matrix.row_ids() == m.row_ids());

  auto bytes = read_file(dir / "e.bin");
  CHECK(bytes.substr(0, 4) == "LMAR");
  CHECK(bytes.size() == 16 + 37 * 13 * 4);
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 37);
}

TEST_CASE("SIMD kernels agree with the scalar reference") {
  const auto& ref = simd::scalar_kernels();
  std::vector<const simd::Kernels*> variants{simd::avx2_kernels(), simd::neon_kernels(), &simd::active()};
  Rng rng(77);
  for (const auto* k : variants) {
    if (!k) continue;
    for (int trial = 0; trial < 300; ++trial) {
      std::size_t n = rng.uniform_index(530);
      auto a = testing::gaussian(rng, n), b = testing::gaussian(rng, n);
      std::vector<float> f(n);
      for (std::size_t i = 0; i < n; ++i) f[i] = static_cast<float>(a[i]);
      double scale = 0;
      for (std::size_t i = 0; i < n; ++i) scale += std::abs(a[i] * b[i]);
      double tol = 1e-12 * (scale + 1.0);
      CHECK(std::abs(k->dot_f64(a.data(), b.data(), n) - ref.dot_f64(a.data(), b.data(), n)) <= tol);
      CHECK(std::abs(k->dot_f32_f64(f.data(), b.data(), n) - ref.dot_f32_f64(f.data(), b.data(), n)) <= tol);
      auto y1 = b, y2 = b;
      double alpha = rng.normal();
      k->axpy_f64(alpha, a.data(), y1.data(), n);
      ref.axpy_f64(alpha, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-12 * (std::abs(y2[i]) + 1.0));
    }
  }
  CHECK(ref.isa == simd::Isa::Scalar);
}

TEST_CASE("remote provider wire format and index reassembly") {
  testing::LocalServer srv;
  std::atomic<int> calls{0};
  std::string auth;
  std::mutex mu;
  srv.server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    auto body = Json::parse(req.body);
    {
      std::lock_guard lock(mu);
      auth = req.get_header_value("Authorization");
    }
    CHECK(body.at("model") == "emb-test");
    Json data = Json::array();
    const auto& input = body.at("input");
    // Reply in reverse order; the client must reassemble by index.
    for (std::size_t i = input.size(); i-- > 0;) {
      std::string t = input[i];
      data.push_back({{"index", i}, {"embedding", {static_cast<double>(t.size()), 1.0}}});
    }
    res.set_content(Json{{"data", data}}.dump(), "application/json");
  });
  srv.start();

  ::setenv("LMAR_TEST_EMBED_KEY", "sekrit", 1);
  ProviderConfig cfg;
  cfg.kind = ProviderKind::Remote;
  cfg.base_url = srv.url("/v1");
  cfg.model_name = "emb-test";
  cfg.batch_size = 2;
  cfg.max_parallel = 2;
  cfg.api_key_env = "LMAR_TEST_EMBED_KEY";
  std::vector<std::string> texts{"a", "bb", "ccc", "dddd", "eeeee"};
  auto out = embed_batch(cfg, texts);
  REQUIRE(out.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(out[i].components[0] == static_cast<double>(i + 1));
  CHECK(calls == 3);
  CHECK(auth == "Bearer sekrit");
}

TEST_CASE("remote provider surfaces ProviderUnavailable") {
  testing::LocalServer srv;
  srv.server.Post("/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"data\": [{\"index\": 0, \"embedding\": [1.0]}]}", "application/json");
  });
  srv.start();
  ProviderConfig cfg;
  cfg.kind = ProviderKind::Remote;
  cfg.base_url = srv.url();
  cfg.model_name = "m";
  std::vector<std::string> texts{"one", "two"};
  CHECK(code_of([&] { embed_batch(cfg, texts); }) == ErrorCode::ProviderUnavailable);
}
