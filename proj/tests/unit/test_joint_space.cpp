// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "tce/checkpoint.hpp"
#include "tce/error.hpp"
#include "tce/joint_space.hpp"
#include "tce/ops.hpp"
#include "test_support.hpp"

using namespace tce;
using tce::testing::fd_max_rel_error;
using tce::testing::random_matrix;

namespace {

double loss_of(const Tensor& s, double margin, std::size_t n_hard) {
  Graph g;
  return ranking_loss(g.constant(s), margin, n_hard).value().scalar_value();
}

// Sort every negative by (score desc, index asc), keep the first k, average.
double brute_force_loss(const Tensor& s, double margin, std::size_t k) {
  const std::size_t b = s.rows();
  k = std::min(k, b - 1);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::pair<double, std::size_t>> neg;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) neg.push_back({-s(i, j), j});
    std::sort(neg.begin(), neg.end());
    for (std::size_t t = 0; t < k; ++t) total += std::max(0.0, margin + s(i, neg[t].second) - s(i, i));
  }
  return total / static_cast<double>(k);
}

}  // namespace

TEST_CASE("project") {
  Rng rng(1);
  SUBCASE("identity affine without normalization is the identity") {
    JointConfig cfg;
    cfg.d_star = 3;
    cfg.use_projections = true;
    cfg.normalize = false;
    ParamStore store;
    init_joint_params(store, cfg, 3, 3, rng);
    Tensor& w = store.at("joint.q.w").value;
    w.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
    store.at("joint.q.b").value.fill(0.0);
    Graph g(&store);
    Tensor x = random_matrix(4, 3, rng);
    CHECK(project(g, g.constant(x), Side::query, cfg, true).value() == x);
  }

  SUBCASE("tanh keeps coordinates inside (-1, 1)") {
    JointConfig cfg;
    cfg.d_star = 8;
    cfg.use_projections = true;
    ParamStore store;
    init_joint_params(store, cfg, 5, 7, rng);
    Graph g(&store);
    Tensor q = project(g, g.constant(random_matrix(6, 5, rng, -50, 50)), Side::query, cfg, true).value();
    Tensor v = project(g, g.constant(random_matrix(6, 7, rng)), Side::video, cfg, false).value();
    CHECK(q.cols() == 8);
    CHECK(v.cols() == 8);
    for (double e : q.data()) CHECK(std::abs(e) < 1.0);
    for (double e : v.data()) CHECK(std::abs(e) < 1.0);
  }

  SUBCASE("no projections: 512 wide, normalization still applied, running stats move") {
    JointConfig cfg;
    ParamStore store;
    init_joint_params(store, cfg, 512, 512, rng);
    CHECK_FALSE(store.contains("joint.q.w"));
    CHECK_FALSE(store.at("joint.q.bn_mean").trainable);
    Graph g(&store);
    Tensor x = random_matrix(4, 512, rng, 2.0, 3.0);
    Tensor y = project(g, g.constant(x), Side::query, cfg, true).value();
    CHECK(y.cols() == 512);
    // column means of tanh(BN(x)) with unit gain sit near 0, not near tanh(2.5)
    double mean0 = 0;
    for (std::size_t r = 0; r < 4; ++r) mean0 += y(r, 0);
    CHECK(std::abs(mean0 / 4) < 0.5);
    CHECK(store.value("joint.q.bn_mean")[0] > 0.1);
    CHECK_THROWS_AS(project(g, g.constant(random_matrix(2, 6, rng)), Side::query, cfg, true), ShapeError);
  }

  SUBCASE("config errors") {
    JointConfig cfg;
    ParamStore store;
    CHECK_THROWS_AS(init_joint_params(store, cfg, 64, 512, rng), ConfigError);
    cfg.margin = 1.0;
    CHECK_THROWS_AS(init_joint_params(store, cfg, 512, 512, rng), ConfigError);
  }
}

TEST_CASE("cosine") {
  Tensor a = Tensor::row({1.0, 2.0, -2.0});
  CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(Tensor::row({1.0, 0.0}), Tensor::row({0.0, 3.0})) == 0.0);
  Tensor neg = Tensor::row({-1.0, -2.0, 2.0});
  CHECK(cosine(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine(a, Tensor::row({0.0, 0.0, 0.0})), NumericalError);
}

TEST_CASE("similarity_matrix") {
  Rng rng(2);
  Graph g;
  Tensor q = random_matrix(5, 4, rng);
  Tensor v = random_matrix(5, 4, rng);
  Tensor s = similarity_matrix(g.constant(q), g.constant(v)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(s(i, j) == doctest::Approx(cosine(Tensor::row(q.row_vector(i)), Tensor::row(v.row_vector(j)))).epsilon(1e-12));
      CHECK(std::abs(s(i, j)) <= 1.0 + 1e-12);
    }

  CHECK(similarity_matrix(g.constant(random_matrix(1, 4, rng)), g.constant(random_matrix(1, 4, rng))).rows() == 1);

  Tensor same_q = Tensor::from_rows({{1, 2, 3}, {1, 2, 3}});
  Tensor same_v = Tensor::from_rows({{0, 1, 1}, {0, 1, 1}});
  Tensor c = similarity_matrix(g.constant(same_q), g.constant(same_v)).value();
  for (double e : c.data()) CHECK(e == c[0]);

  // ranking of videos per query survives positive rescaling of a query
  Tensor scaled = q;
  for (std::size_t j = 0; j < 4; ++j) scaled(2, j) *= 37.5;
  Tensor s2 = similarity_matrix(g.constant(scaled), g.constant(v)).value();
  std::vector<std::size_t> o1(5), o2(5);
  std::iota(o1.begin(), o1.end(), 0);
  std::iota(o2.begin(), o2.end(), 0);
  std::stable_sort(o1.begin(), o1.end(), [&](auto a, auto b) { return s(2, a) > s(2, b); });
  std::stable_sort(o2.begin(), o2.end(), [&](auto a, auto b) { return s2(2, a) > s2(2, b); });
  CHECK(o1 == o2);

  CHECK_THROWS_AS(similarity_matrix(g.constant(random_matrix(2, 4, rng)), g.constant(random_matrix(3, 4, rng))),
                  ShapeError);
  CHECK_THROWS_AS(similarity_matrix(g.constant(Tensor::matrix(2, 4)), g.constant(random_matrix(2, 4, rng))),
                  NumericalError);
}

TEST_CASE("ranking_loss examples") {
  CHECK(loss_of(Tensor::from_rows({{0.9, 0.1}, {0.0, 0.8}}), 0.2, 1) == 0.0);
  CHECK(loss_of(Tensor::from_rows({{0.5, 0.6}, {0.3, 0.4}}), 0.2, 1) == doctest::Approx(0.4).epsilon(1e-12));
  Graph g;
  CHECK_THROWS_WITH_AS(ranking_loss(g.constant(Tensor::from_rows({{1.0}})), 0.2, 1), "no negatives in batch",
                       ShapeError);
}

TEST_CASE("hard negatives: ties go to the lower index") {
  Tensor s = Tensor::from_rows({{0.9, 0.3, 0.5, 0.5, 0.1}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0},
                                {0, 0, 0, 0, 0}});
  CHECK(hard_negatives(s, 0, 2) == std::vector<std::size_t>{2, 3});
  CHECK(hard_negatives(s, 0, 1) == std::vector<std::size_t>{2});
  CHECK(hard_negatives(s, 1, 3) == std::vector<std::size_t>{0, 2, 3});
  CHECK(hard_negatives(s, 0, 99).size() == 4);
  std::vector<std::size_t> groups{0, 1, 0, 2, 3};
  CHECK(hard_negatives(s, 0, 2, &groups) == std::vector<std::size_t>{3, 1});
}

TEST_CASE("property: ranking loss against brute force") {
  Rng rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t b = 2 + rng() % 15;
    Tensor s = random_matrix(b, b, rng);
    // coarse values force plenty of ties at the selection boundary
    if (trial % 2 == 0)
      for (double& e : s.data()) e = std::round(e * 4) / 4;
    const double margin = 0.05 + 0.9 * (rng() % 100) / 100.0;
    const std::size_t k = 1 + rng() % b;
    const double got = loss_of(s, margin, k);
    CHECK(got == doctest::Approx(brute_force_loss(s, margin, k)).epsilon(1e-12));

    // all negatives: plain mean over every hinge
    double all = 0;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        if (i != j) all += std::max(0.0, margin + s(i, j) - s(i, i));
    CHECK(loss_of(s, margin, b - 1) == doctest::Approx(all / static_cast<double>(b - 1)).epsilon(1e-12));

    // zero exactly when every selected negative is beaten by the margin
    bool satisfied = true;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j : hard_negatives(s, i, k)) satisfied &= margin + s(i, j) - s(i, i) <= 0.0;
    CHECK((got == 0.0) == satisfied);

    // monotone: raising a negative never lowers the loss, raising a positive never raises it
    const std::size_t i = rng() % b;
    std::size_t j = rng() % b;
    if (j == i) j = (j + 1) % b;
    Tensor up = s;
    up(i, j) += 0.3;
    CHECK(loss_of(up, margin, k) >= got - 1e-15);
    Tensor pos = s;
    pos(i, i) += 0.3;
    CHECK(loss_of(pos, margin, k) <= got + 1e-15);
  }
}

TEST_CASE("duplicate positives can be excluded") {
  // pairs 0 and 1 share a video
  Tensor s = Tensor::from_rows({{0.5, 0.5, 0.0}, {0.5, 0.5, 0.0}, {0.0, 0.0, 0.9}});
  Graph g;
  CHECK(ranking_loss(g.constant(s), 0.2, 1).value().scalar_value() == doctest::Approx(0.4).epsilon(1e-12));
  std::vector<std::size_t> groups{7, 7, 8};
  // rows 0 and 1 only see column 2: hinge 0.2 - 0.5 < 0
  CHECK(ranking_loss(g.constant(s), 0.2, 1, &groups).value().scalar_value() == 0.0);
}

TEST_CASE("joint gradients match finite differences") {
  Rng rng(4);
  JointConfig cfg;
  cfg.d_star = 5;
  cfg.use_projections = true;
  cfg.n_hard = 2;
  cfg.margin = 0.5;
  ParamStore store;
  init_joint_params(store, cfg, 4, 6, rng);
  Tensor q = random_matrix(5, 4, rng);
  Tensor v = random_matrix(5, 6, rng);
  auto loss = [&](Graph& g) {
    Var s = similarity_matrix(project(g, g.constant(q), Side::query, cfg, true),
                              project(g, g.constant(v), Side::video, cfg, true));
    return ranking_loss(s, cfg.margin, cfg.n_hard);
  };
  {
    Graph g(&store);
    REQUIRE(loss(g).value().scalar_value() > 0.0);
  }
  CHECK(fd_max_rel_error(store, loss) < 1e-4);
}

TEST_CASE("embedding dump") {
  namespace fs = std::filesystem;
  const fs::path prefix = fs::temp_directory_path() / "tce_dump_test";
  Tensor q = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor v = Tensor::from_rows({{5, 6}});
  write_embedding_dump(prefix, q, {"a", "b"}, v, {"vid"});
  NamedTensors back = read_tensors(prefix.string() + ".tcem");
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "query_embeddings");
  CHECK(back[0].second == q);
  CHECK(back[1].second == v);
  CHECK(fs::file_size(prefix.string() + ".index.txt") > 0);
  CHECK_THROWS_AS(write_embedding_dump(prefix, q, {"a"}, v, {"vid"}), ShapeError);
  fs::remove(prefix.string() + ".tcem");
  fs::remove(prefix.string() + ".index.txt");
}
