// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tce/adam.hpp"
#include "tce/checkpoint.hpp"
#include "tce/error.hpp"
#include "tce/grad_check.hpp"
#include "tce/graph.hpp"
#include "tce/ops.hpp"
#include "test_support.hpp"

using namespace tce;
using tce::testing::fd_max_rel_error;
using tce::testing::random_matrix;
using tce::testing::random_projection_loss;

TEST_CASE("primitive forward values") {
  Graph g;
  CHECK(sigmoid(g.constant(Tensor::scalar(0.0))).value()[0] == doctest::Approx(0.5).epsilon(1e-15));

  Var s = softmax_rows(g.constant(Tensor::row({2.5, 2.5, 2.5})));
  for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Var ln = layer_norm_rows(g.constant(Tensor::row({1.0, 2.0, 4.0, 7.0})), g.constant(Tensor::row({1, 1, 1, 1})),
                           g.constant(Tensor::row({0, 0, 0, 0})), 1e-5);
  double mean = 0.0, var = 0.0;
  for (double v : ln.value().data()) mean += v / 4.0;
  for (double v : ln.value().data()) var += (v - mean) * (v - mean) / 4.0;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  // var of the raw input is 5.25, so eps shrinks the normalized variance slightly
  CHECK(var == doctest::Approx(5.25 / (5.25 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("backward of elementary losses") {
  ParamStore store;
  store.add("x", Tensor::row({1.0, 2.0}));
  store.add("unused", Tensor::row({3.0}));
  Graph g(&store);
  Var x = g.param("x");
  Gradients grads = g.backward(sum_all(mul(x, x)));
  CHECK(grads.at("x")[0] == 2.0);
  CHECK(grads.at("x")[1] == 4.0);
  REQUIRE(grads.contains("unused"));
  CHECK(grads.at("unused")[0] == 0.0);

  ParamStore s2;
  s2.add("z", Tensor::scalar(0.0));
  Graph g2(&s2);
  CHECK(g2.backward(sigmoid(g2.param("z"))).at("z")[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gradients accumulate over multiple consumers") {
  ParamStore store;
  store.add("x", Tensor::scalar(3.0));
  Graph g(&store);
  Var x = g.param("x");
  // x*x + 5x + x => 2x + 6
  Var y = add(add(mul(x, x), scale(x, 5.0)), x);
  CHECK(g.backward(y).at("x")[0] == doctest::Approx(12.0));
}

TEST_CASE("error paths") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, 1.0));
  Var b = g.constant(Tensor::matrix(2, 3, 1.0));
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(g.backward(a), ShapeError);
  CHECK_THROWS_AS(log(g.constant(Tensor::row({1.0, 0.0}))), NumericalError);
  CHECK_THROWS_AS(scale(g.constant(Tensor::scalar(1e300)), 1e300), NumericalError);
  CHECK_THROWS_AS(l2_normalize_rows(g.constant(Tensor::row({0.0, 0.0}))), NumericalError);
  std::vector<bool> none(3, false);
  CHECK_THROWS_AS(softmax_rows(a, &none), ShapeError);
}

TEST_CASE("property: every op's analytic gradient matches finite differences") {
  Rng rng(20240611);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t r = dim(rng) + 1, c = dim(rng), k = dim(rng);
    using Build = std::function<Var(Graph&, Rng&)>;
    ParamStore store;
    store.add("a", random_matrix(r, c, rng));
    store.add("b", random_matrix(c, k, rng));
    store.add("same", random_matrix(r, c, rng));
    store.add("row", random_matrix(1, c, rng));
    store.add("pos", random_matrix(r, c, rng, 0.5, 2.0));
    store.add("gain", random_matrix(1, c + 1, rng, 0.5, 1.5));
    store.add("bias", random_matrix(1, c + 1, rng));
    Tensor rm = random_matrix(1, c + 1, rng);
    Tensor rv = random_matrix(1, c + 1, rng, 0.5, 2.0);

    const std::vector<std::pair<const char*, Build>> cases = {
        {"matmul", [](Graph& g, Rng&) { return matmul(g.param("a"), g.param("b")); }},
        {"transpose", [](Graph& g, Rng&) { return transpose(g.param("a")); }},
        {"add", [](Graph& g, Rng&) { return add(g.param("a"), g.param("same")); }},
        {"add_bcast", [](Graph& g, Rng&) { return add(g.param("a"), g.param("row")); }},
        {"sub", [](Graph& g, Rng&) { return sub(g.param("a"), g.param("same")); }},
        {"mul", [](Graph& g, Rng&) { return mul(g.param("a"), g.param("same")); }},
        {"mul_bcast", [](Graph& g, Rng&) { return mul(g.param("a"), g.param("row")); }},
        {"affine_scalar", [](Graph& g, Rng&) { return affine_scalar(g.param("a"), -1.5, 0.25); }},
        {"concat_cols", [](Graph& g, Rng&) { return concat_cols({g.param("a"), g.param("same")}); }},
        {"concat_rows", [](Graph& g, Rng&) { return concat_rows({g.param("a"), g.param("row")}); }},
        {"slices", [](Graph& g, Rng&) { return slice_rows(slice_cols(g.param("a"), 0, g.param("a").cols()), 1, 1); }},
        {"gather", [](Graph& g, Rng&) {
           std::vector<std::size_t> idx{1, 0, 1};
           return gather_rows(g.param("a"), idx);
         }},
        {"sigmoid", [](Graph& g, Rng&) { return sigmoid(g.param("a")); }},
        {"tanh", [](Graph& g, Rng&) { return tanh(g.param("a")); }},
        {"relu", [](Graph& g, Rng&) { return relu(g.param("pos")); }},
        {"log", [](Graph& g, Rng&) { return log(g.param("pos")); }},
        {"softmax", [](Graph& g, Rng&) { return softmax_rows(g.param("a")); }},
        {"softmax_masked", [](Graph& g, Rng&) {
           static std::vector<bool> keep;
           keep.assign(g.param("a").cols(), true);
           keep.back() = keep.size() == 1;
           return softmax_rows(g.param("a"), &keep);
         }},
        {"scaled_dot", [](Graph& g, Rng&) { return scaled_dot_product(g.param("a"), g.param("same")); }},
        {"layer_norm", [](Graph& g, Rng&) {
           return layer_norm_rows(concat_cols({g.param("a"), slice_cols(g.param("same"), 0, 1)}), g.param("gain"),
                                  g.param("bias"));
         }},
        {"batch_norm_train", [&rm, &rv](Graph& g, Rng&) {
           return batch_norm(concat_cols({g.param("a"), slice_cols(g.param("same"), 0, 1)}), g.param("gain"),
                             g.param("bias"), BatchNormState{&rm, &rv}, true);
         }},
        {"batch_norm_eval", [&rm, &rv](Graph& g, Rng&) {
           return batch_norm(concat_cols({g.param("a"), slice_cols(g.param("same"), 0, 1)}), g.param("gain"),
                             g.param("bias"), BatchNormState{&rm, &rv}, false);
         }},
        {"mean_rows", [](Graph& g, Rng&) { return mean_rows(g.param("a")); }},
        {"max_rows", [](Graph& g, Rng&) { return max_rows(g.param("a")); }},
        {"l2_normalize", [](Graph& g, Rng&) { return l2_normalize_rows(g.param("a")); }},
    };
    for (const auto& [name, build] : cases) {
      CAPTURE(name);
      CAPTURE(trial);
      const std::uint64_t probe_seed = rng();
      auto loss = [&](Graph& g) {
        Rng local(probe_seed);
        Var y = build(g, local);
        return random_projection_loss(g, y, local);
      };
      CHECK(fd_max_rel_error(store, loss) < 1e-4);
    }
  }
}

TEST_CASE("property: softmax rows are distributions and respect masks") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + trial % 4, c = 1 + trial % 7;
    Graph g;
    Var x = g.constant(random_matrix(r, c, rng, -30.0, 30.0));
    std::vector<bool> keep(c);
    for (std::size_t j = 0; j < c; ++j) keep[j] = (rng() % 3) != 0;
    keep[rng() % c] = true;
    const Tensor& y = softmax_rows(x, &keep).value();
    for (std::size_t i = 0; i < r; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(y(i, j) >= 0.0);
        if (!keep[j]) CHECK(y(i, j) == 0.0);
        sum += y(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("batch norm inference is independent of batch composition") {
  Rng rng(3);
  Tensor rm = random_matrix(1, 4, rng);
  Tensor rv = random_matrix(1, 4, rng, 0.5, 1.5);
  Tensor probe = random_matrix(1, 4, rng);
  auto run = [&](const Tensor& others) {
    Graph g;
    Var x = concat_rows({g.constant(probe), g.constant(others)});
    Var y = batch_norm(x, g.constant(Tensor::row({1.2, 0.8, 1.0, 1.1})), g.constant(Tensor::row({0.1, 0, 0, -0.2})),
                       BatchNormState{&rm, &rv}, false);
    return y.value().row_vector(0);
  };
  CHECK(run(random_matrix(3, 4, rng)) == run(random_matrix(7, 4, rng)));
  const Tensor before = rm;
  run(random_matrix(2, 4, rng));
  CHECK(rm == before);
}

TEST_CASE("batch norm training updates running statistics with momentum 0.1") {
  Tensor rm = Tensor::row({0.0});
  Tensor rv = Tensor::row({1.0});
  Graph g;
  batch_norm(g.constant(Tensor::from_rows({{1.0}, {3.0}})), g.constant(Tensor::row({1.0})),
             g.constant(Tensor::row({0.0})), BatchNormState{&rm, &rv}, true);
  CHECK(rm[0] == doctest::Approx(0.2));
  // unbiased batch variance is 2
  CHECK(rv[0] == doctest::Approx(0.9 + 0.2));
}

TEST_CASE("forward values are bitwise deterministic") {
  auto run = [] {
    Rng rng(99);
    Graph g;
    Var a = g.constant(random_matrix(5, 6, rng));
    Var b = g.constant(random_matrix(6, 3, rng));
    return softmax_rows(tanh(matmul(a, b))).value();
  };
  CHECK(run() == run());
}

TEST_CASE("adam update rule") {
  SUBCASE("zero gradient leaves the parameter and decays the moments") {
    ParamStore store;
    store.add("p", Tensor::scalar(1.5));
    store.at("p").first_moment[0] = 0.2;
    store.at("p").second_moment[0] = 0.04;
    // first_moment is nonzero, so only the value check with zero moments is exact
    ParamStore fresh;
    fresh.add("p", Tensor::scalar(1.5));
    adam_step(fresh, {{"p", Tensor::scalar(0.0)}}, {});
    CHECK(fresh.value("p")[0] == 1.5);
    adam_step(store, {{"p", Tensor::scalar(0.0)}}, {});
    CHECK(store.at("p").first_moment[0] == doctest::Approx(0.18));
    CHECK(store.at("p").second_moment[0] == doctest::Approx(0.04 * 0.999));
    CHECK(store.at("p").step == 1);
  }
  SUBCASE("first step with g = 0.5") {
    ParamStore store;
    store.add("p", Tensor::scalar(0.0));
    adam_step(store, {{"p", Tensor::scalar(0.5)}}, AdamOptions{0.001, 0.9, 0.999, 1e-8});
    CHECK(store.value("p")[0] == doctest::Approx(-0.001 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));
  }
  SUBCASE("momentum keeps moving the parameter after the gradient vanishes") {
    ParamStore store;
    store.add("p", Tensor::scalar(0.0));
    const AdamOptions opt{0.001, 0.9, 0.999, 1e-8};
    adam_step(store, {{"p", Tensor::scalar(0.5)}}, opt);
    double m = 0.05, v = 0.00025, p = store.value("p")[0];
    for (int t = 2; t <= 3; ++t) {
      adam_step(store, {{"p", Tensor::scalar(0.0)}}, opt);
      m *= 0.9;
      v *= 0.999;
      const double expected = p - 0.001 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(store.value("p")[0] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(store.value("p")[0] < p);
      p = store.value("p")[0];
    }
  }
  SUBCASE("shape mismatch") {
    ParamStore store;
    store.add("p", Tensor::row({0.0, 1.0}));
    CHECK_THROWS_AS(adam_step(store, {{"p", Tensor::scalar(0.0)}}, {}), ShapeError);
  }
}

TEST_CASE("grad_check") {
  ParamStore store;
  store.add("x", Tensor::row({0.3, -1.2, 2.0}));
  auto square = [](Graph& g) {
    Var x = g.param("x");
    return sum_all(mul(x, x));
  };
  GradCheckReport r = grad_check(square, store, {1e-5, 1, 32});
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.checked == 3);
  CHECK_THROWS_AS(grad_check(square, store, {1e-3, 1, 32}), ConfigError);

  SUBCASE("samples at most 32 coordinates per parameter") {
    Rng rng(1);
    ParamStore big;
    big.add("w", random_matrix(10, 10, rng));
    GradCheckReport rb = grad_check([](Graph& g) { return sum_all(tanh(g.param("w"))); }, big, {1e-5, 3, 32});
    CHECK(rb.checked == 32);
    CHECK(rb.max_rel_error < 1e-6);
  }
  SUBCASE("relu exactly at zero is reported as a kink") {
    ParamStore k;
    k.add("x", Tensor::row({0.0, 1.0}));
    GradCheckReport rk = grad_check([](Graph& g) { return sum_all(relu(g.param("x"))); }, k, {});
    CHECK(rk.skipped_at_kink);
    CHECK(rk.summary() == "skipped at kink");
  }
  SUBCASE("structural zeros under finite-difference noise are not compared") {
    // (y + u) - u: analytic gradient for u is exactly 0, numeric is round-off
    ParamStore k;
    k.add("y", Tensor::row({1234.5, -987.25, 4321.125}));
    k.add("u", Tensor::row({0.1, 0.7, -0.3}));
    GradCheckReport rz = grad_check(
        [](Graph& g) { return sum_all(sub(add(g.param("y"), g.param("u")), g.param("u"))); }, k, {1e-5, 0, 32});
    CHECK(rz.below_resolution == 3);
    CHECK(rz.checked == 3);
    CHECK(rz.max_rel_error < 1e-6);  // y: round-off of order eps * |L| / h
    CHECK(rz.passed(1e-4));
  }
  SUBCASE("a wrong gradient of 1e-6 is still caught") {
    // forward is constant, backward flows through 1e-6 * x
    ParamStore k;
    k.add("x", Tensor::row({0.4, -0.2}));
    GradCheckReport rw = grad_check(
        [](Graph& g) { return sum_all(straight_through(scale(g.param("x"), 1e-6), Tensor::row({1.0, 2.0}))); }, k,
        {1e-5, 0, 32});
    CHECK(rw.below_resolution == 0);
    CHECK(rw.max_rel_error > 0.5);
    CHECK_FALSE(rw.passed(1e-4));
  }
  SUBCASE("non-finite loss while probing") {
    ParamStore k;
    k.add("x", Tensor::scalar(1e-6));
    CHECK_THROWS_AS(grad_check([](Graph& g) { return log(g.param("x")); }, k, {1e-5, 0, 32}), NumericalError);
  }
}

TEST_CASE("checkpoint container") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tce_ckpt_test";
  fs::create_directories(dir);
  Rng rng(5);
  ParamStore store;
  store.add("alpha", random_matrix(3, 4, rng));
  store.add("beta.gain", random_matrix(1, 2, rng));
  store.add("stats", random_matrix(1, 2, rng), false);

  save_checkpoint(dir / "a.tcem", store, StoragePrecision::f64);
  ParamStore copy = store;
  for (auto& [n, p] : copy.entries()) p.value.fill(0.0);
  load_checkpoint(dir / "a.tcem", copy);
  for (const auto& [n, p] : store.entries()) CHECK(copy.value(n) == p.value);

  save_checkpoint(dir / "b.tcem", store, StoragePrecision::f32);
  load_checkpoint(dir / "b.tcem", copy);
  CHECK(copy.value("alpha")[0] == static_cast<double>(static_cast<float>(store.value("alpha")[0])));

  // header bytes: magic, version, count, precision flag
  std::ifstream is(dir / "a.tcem", std::ios::binary);
  std::string head(16, '\0');
  is.read(head.data(), 16);
  CHECK(head.substr(0, 4) == "TCEM");
  CHECK(head[4] == 1);
  CHECK(head[8] == 3);
  CHECK(head[12] == 8);

  {
    std::ofstream bad(dir / "bad.tcem", std::ios::binary);
    bad << "NOPE0000";
  }
  CHECK_THROWS_AS(read_tensors(dir / "bad.tcem"), FormatError);

  ParamStore other;
  other.add("alpha", Tensor::matrix(2, 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "a.tcem", other), FormatError);
  fs::remove_all(dir);
}
