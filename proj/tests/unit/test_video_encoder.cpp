// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tce/error.hpp"
#include "tce/ops.hpp"
#include "tce/video_encoder.hpp"
#include "test_support.hpp"

using namespace tce;
using tce::testing::fd_max_rel_error;
using tce::testing::random_matrix;

namespace {

VideoEncoderConfig small_config() {
  VideoEncoderConfig cfg;
  cfg.frame_dim = 5;
  cfg.d_v = 6;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.d_va = 4;
  return cfg;
}

FrameFeatures random_frames(std::size_t m, std::size_t valid, std::size_t dim, Rng& rng) {
  return fit_frames(random_matrix(valid, dim, rng), m, "v");
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight loops over the stored weights, gate columns [r | z | n].
std::vector<std::vector<double>> gru_oracle(const ParamStore& s, const Tensor& x, std::size_t d) {
  const Tensor& wx = s.value("video.gru.w_x");
  const Tensor& wh = s.value("video.gru.w_h");
  const Tensor& bx = s.value("video.gru.b_x");
  const Tensor& bh = s.value("video.gru.b_h");
  std::vector<double> h(d, 0.0);
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    std::vector<double> gx(3 * d), gh(3 * d);
    for (std::size_t j = 0; j < 3 * d; ++j) {
      gx[j] = bx[j];
      gh[j] = bh[j];
      for (std::size_t i = 0; i < x.cols(); ++i) gx[j] += x(t, i) * wx(i, j);
      for (std::size_t i = 0; i < d; ++i) gh[j] += h[i] * wh(i, j);
    }
    std::vector<double> next(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double r = sigm(gx[j] + gh[j]);
      const double z = sigm(gx[d + j] + gh[d + j]);
      const double n = std::tanh(gx[2 * d + j] + r * gh[2 * d + j]);
      next[j] = (1 - z) * n + z * h[j];
    }
    h = next;
    out.push_back(h);
  }
  return out;
}

}  // namespace

TEST_CASE("TCEF round trip and errors") {
  namespace fs = std::filesystem;
  Rng rng(1);
  const fs::path path = fs::temp_directory_path() / "tce_frames_test.tcef";
  Tensor raw = random_matrix(7, 3, rng);
  write_tcef(path, raw);
  CHECK(fs::file_size(path) == 16 + 7 * 3 * 4);
  Tensor back = read_tcef(path);
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 3);
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(raw[i])));

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "TCEX";
  }
  CHECK_THROWS_AS(read_tcef(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write("TCEF\x01\0\0\0\x02\0\0\0\x02\0\0\0", 16);
    os.write("\0\0\0\0", 4);
  }
  CHECK_THROWS_AS(read_tcef(path), FormatError);
  CHECK_THROWS_AS(read_tcef(path.string() + ".missing"), FormatError);
  fs::remove(path);
}

TEST_CASE("fit_frames") {
  Tensor raw = Tensor::matrix(10, 1);
  for (std::size_t i = 0; i < 10; ++i) raw(i, 0) = static_cast<double>(i);

  FrameFeatures sub = fit_frames(raw, 4);
  CHECK(sub.valid_count() == 4);
  // segment centres of 4 equal parts of 10: 1.25, 3.75, 6.25, 8.75
  CHECK(sub.frames(0, 0) == 1.0);
  CHECK(sub.frames(1, 0) == 3.0);
  CHECK(sub.frames(2, 0) == 6.0);
  CHECK(sub.frames(3, 0) == 8.0);

  FrameFeatures pad = fit_frames(raw, 16, "x");
  CHECK(pad.count() == 16);
  CHECK(pad.valid_count() == 10);
  CHECK(pad.mask[9]);
  CHECK_FALSE(pad.mask[10]);
  CHECK(pad.frames(15, 0) == 0.0);
  CHECK(pad.video_id == "x");

  FrameFeatures same = fit_frames(raw, 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(same.frames(i, 0) == raw(i, 0));
  CHECK_THROWS_AS(fit_frames(raw, 0), ConfigError);
}

TEST_CASE("gru_encode") {
  auto cfg = small_config();
  Rng rng(2);

  SUBCASE("zero weights keep every state at zero") {
    ParamStore store;
    init_video_params(store, cfg, rng);
    for (auto& [n, p] : store.entries()) p.value.fill(0.0);
    Graph g(&store);
    Var h = gru_encode(g, random_frames(4, 4, cfg.frame_dim, rng), cfg);
    for (double v : h.value().data()) CHECK(v == 0.0);
  }

  SUBCASE("matches a hand-rolled recurrence; padding rows are zero") {
    ParamStore store;
    init_video_params(store, cfg, rng);
    FrameFeatures f = random_frames(6, 4, cfg.frame_dim, rng);
    Graph g(&store);
    Tensor h = gru_encode(g, f, cfg).value();
    REQUIRE(h.rows() == 6);
    Tensor real = Tensor::matrix(4, cfg.frame_dim);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < cfg.frame_dim; ++j) real(t, j) = f.frames(t, j);
    auto expect = gru_oracle(store, real, cfg.d_v);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < cfg.d_v; ++j) CHECK(h(t, j) == doctest::Approx(expect[t][j]).epsilon(1e-12));
    for (std::size_t t = 4; t < 6; ++t)
      for (std::size_t j = 0; j < cfg.d_v; ++j) CHECK(h(t, j) == 0.0);
  }

  SUBCASE("M = 1 is one step from the zero state") {
    ParamStore store;
    init_video_params(store, cfg, rng);
    FrameFeatures f = random_frames(1, 1, cfg.frame_dim, rng);
    Graph g(&store);
    Tensor h = gru_encode(g, f, cfg).value();
    auto expect = gru_oracle(store, f.frames, cfg.d_v);
    for (std::size_t j = 0; j < cfg.d_v; ++j) CHECK(h(0, j) == doctest::Approx(expect[0][j]).epsilon(1e-12));
  }

  SUBCASE("errors") {
    ParamStore store;
    init_video_params(store, cfg, rng);
    Graph g(&store);
    FrameFeatures none = random_frames(3, 1, cfg.frame_dim, rng);
    none.mask[0] = false;
    CHECK_THROWS_AS(gru_encode(g, none, cfg), ShapeError);
    FrameFeatures wrong = random_frames(3, 3, cfg.frame_dim + 1, rng);
    CHECK_THROWS_AS(gru_encode(g, wrong, cfg), ShapeError);
  }
}

TEST_CASE("multihead_self_attention") {
  auto cfg = small_config();
  Rng rng(3);
  ParamStore store;
  init_video_params(store, cfg, rng);

  SUBCASE("zeroed output projection leaves LayerNorm of the input") {
    store.at("video.mha.w_o").value.fill(0.0);
    Graph g(&store);
    Tensor v = random_matrix(5, cfg.d_v, rng);
    Tensor out = multihead_self_attention(g, g.constant(v), std::vector<bool>(5, true), cfg).sequence.value();
    for (std::size_t r = 0; r < 5; ++r) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < cfg.d_v; ++j) mean += v(r, j);
      mean /= cfg.d_v;
      for (std::size_t j = 0; j < cfg.d_v; ++j) var += (v(r, j) - mean) * (v(r, j) - mean);
      var /= cfg.d_v;
      for (std::size_t j = 0; j < cfg.d_v; ++j)
        CHECK(out(r, j) == doctest::Approx((v(r, j) - mean) / std::sqrt(var + cfg.ln_eps)).epsilon(1e-12));
    }
  }

  SUBCASE("per-head weights are row-stochastic over unmasked keys") {
    Graph g(&store);
    std::vector<bool> mask{true, true, false, true, false};
    auto out = multihead_self_attention(g, g.constant(random_matrix(5, cfg.d_v, rng)), mask, cfg);
    REQUIRE(out.head_weights.size() == cfg.heads);
    for (const Tensor& w : out.head_weights) {
      for (std::size_t r = 0; r < 5; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 5; ++c) {
          if (!mask[c]) CHECK(w(r, c) == 0.0);
          total += w(r, c);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }

  SUBCASE("matches a loop oracle") {
    Graph g(&store);
    Tensor v = random_matrix(3, cfg.d_v, rng);
    Tensor out = multihead_self_attention(g, g.constant(v), std::vector<bool>(3, true), cfg).sequence.value();
    const Tensor& wq = store.value("video.mha.w_q");
    const Tensor& wk = store.value("video.mha.w_k");
    const Tensor& wv = store.value("video.mha.w_v");
    const Tensor& wo = store.value("video.mha.w_o");
    const std::size_t inner = cfg.heads * cfg.head_dim;
    auto proj = [&](const Tensor& w) {
      Tensor p = Tensor::matrix(3, inner);
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < inner; ++j)
          for (std::size_t i = 0; i < cfg.d_v; ++i) p(r, j) += v(r, i) * w(i, j);
      return p;
    };
    Tensor q = proj(wq), k = proj(wk), vv = proj(wv);
    Tensor cat = Tensor::matrix(3, inner);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t o = h * cfg.head_dim;
      for (std::size_t r = 0; r < 3; ++r) {
        double s[3], mx = -1e300, z = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          s[c] = 0;
          for (std::size_t j = 0; j < cfg.head_dim; ++j) s[c] += q(r, o + j) * k(c, o + j);
          s[c] /= std::sqrt(static_cast<double>(cfg.head_dim));
          mx = std::max(mx, s[c]);
        }
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < cfg.head_dim; ++j)
          for (std::size_t c = 0; c < 3; ++c) cat(r, o + j) += s[c] / z * vv(c, o + j);
      }
    }
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> y(cfg.d_v);
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < cfg.d_v; ++j) {
        y[j] = v(r, j);
        for (std::size_t i = 0; i < inner; ++i) y[j] += cat(r, i) * wo(i, j);
        mean += y[j];
      }
      mean /= cfg.d_v;
      for (double e : y) var += (e - mean) * (e - mean);
      var /= cfg.d_v;
      for (std::size_t j = 0; j < cfg.d_v; ++j)
        CHECK(out(r, j) == doctest::Approx((y[j] - mean) / std::sqrt(var + cfg.ln_eps)).epsilon(1e-10));
    }
  }

  SUBCASE("M = 1 puts all weight on the single frame") {
    Graph g(&store);
    auto out = multihead_self_attention(g, g.constant(random_matrix(1, cfg.d_v, rng)), {true}, cfg);
    for (const Tensor& w : out.head_weights) CHECK(w[0] == 1.0);
  }

  SUBCASE("shape mismatch") {
    Graph g(&store);
    CHECK_THROWS_AS(multihead_self_attention(g, g.constant(random_matrix(2, cfg.d_v + 1, rng)), {true, true}, cfg),
                    ShapeError);
  }
}

TEST_CASE("attend_frames") {
  auto cfg = small_config();
  Rng rng(4);
  ParamStore store;
  init_video_params(store, cfg, rng);
  Tensor seq = random_matrix(5, cfg.d_v, rng);
  std::vector<bool> mask{true, false, true, true, false};

  SUBCASE("attention weights") {
    Graph g(&store);
    auto out = attend_frames(g, g.constant(seq), mask, cfg);
    double total = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (!mask[i]) CHECK(out.weights[i] == 0.0);
      total += out.weights[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    for (std::size_t j = 0; j < cfg.d_v; ++j) {
      double expect = 0;
      for (std::size_t i = 0; i < 5; ++i) expect += out.weights[i] * seq(i, j);
      CHECK(out.embedding.value()[j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  SUBCASE("single unmasked frame") {
    Graph g(&store);
    std::vector<bool> one{false, false, true, false, false};
    auto out = attend_frames(g, g.constant(seq), one, cfg);
    CHECK(out.weights[2] == 1.0);
    for (std::size_t j = 0; j < cfg.d_v; ++j) CHECK(out.embedding.value()[j] == seq(2, j));
  }

  SUBCASE("pooling ablations") {
    Graph g(&store);
    Var s = g.constant(seq);
    cfg.pool = VideoPool::avg;
    Tensor avg = attend_frames(g, s, mask, cfg).embedding.value();
    cfg.pool = VideoPool::max;
    Tensor mx = attend_frames(g, s, mask, cfg).embedding.value();
    cfg.pool = VideoPool::last;
    Tensor last = attend_frames(g, s, mask, cfg).embedding.value();
    for (std::size_t j = 0; j < cfg.d_v; ++j) {
      CHECK(avg[j] == doctest::Approx((seq(0, j) + seq(2, j) + seq(3, j)) / 3).epsilon(1e-12));
      CHECK(mx[j] == std::max({seq(0, j), seq(2, j), seq(3, j)}));
      CHECK(last[j] == seq(3, j));
    }
  }

  SUBCASE("all masked") {
    Graph g(&store);
    CHECK_THROWS_AS(attend_frames(g, g.constant(seq), std::vector<bool>(5, false), cfg), ShapeError);
  }
}

TEST_CASE("encode_video") {
  auto cfg = small_config();
  Rng rng(5);
  ParamStore store;
  init_video_params(store, cfg, rng);
  FrameFeatures f = random_frames(6, 4, cfg.frame_dim, rng);

  auto run = [&](const FrameFeatures& frames) {
    Graph g(&store);
    return encode_video(g, frames, cfg).value();
  };

  SUBCASE("full-size dimensions") {
    VideoEncoderConfig full;
    full.frame_dim = 16;
    ParamStore big;
    init_video_params(big, full, rng);
    CHECK(big.value("video.mha.w_q").cols() == 8 * 64);
    CHECK(big.value("video.attn.u").rows() == 256);
    Graph g(&big);
    CHECK(encode_video(g, random_frames(4, 3, 16, rng), full).cols() == 512);
  }

  SUBCASE("deterministic") { CHECK(run(f) == run(f)); }

  SUBCASE("padded rows never matter") {
    Tensor base = run(f);
    FrameFeatures noisy = f;
    for (std::size_t r = 4; r < 6; ++r)
      for (std::size_t j = 0; j < cfg.frame_dim; ++j) noisy.frames(r, j) = 100.0 * (rng() % 7) - 3.0;
    CHECK(run(noisy) == base);
    FrameFeatures swapped = noisy;
    for (std::size_t j = 0; j < cfg.frame_dim; ++j) std::swap(swapped.frames(4, j), swapped.frames(5, j));
    CHECK(run(swapped) == base);
  }

  SUBCASE("ablations run and keep the output width") {
    for (auto rnn : {VideoRnn::gru, VideoRnn::affine}) {
      for (bool mha : {true, false}) {
        for (auto pool : {VideoPool::attn, VideoPool::avg, VideoPool::max, VideoPool::last}) {
          VideoEncoderConfig c = cfg;
          c.rnn = rnn;
          c.use_mha = mha;
          c.pool = pool;
          ParamStore s;
          init_video_params(s, c, rng);
          Graph g(&s);
          CHECK(encode_video(g, f, c).cols() == cfg.d_v);
        }
      }
    }
  }
}

TEST_CASE("end-to-end video gradient") {
  Rng rng(6);
  for (auto rnn : {VideoRnn::gru, VideoRnn::affine}) {
    auto cfg = small_config();
    cfg.rnn = rnn;
    ParamStore store;
    init_video_params(store, cfg, rng);
    FrameFeatures f = random_frames(5, 4, cfg.frame_dim, rng);
    Tensor probe = random_matrix(1, cfg.d_v, rng);
    auto loss = [&](Graph& g) { return sum_all(mul(encode_video(g, f, cfg), g.constant(probe))); };
    CHECK(fd_max_rel_error(store, loss) < 1e-4);
  }
}
