// SPDX-License-Identifier: Apache-2.0
#include "tce/gradient_suite.hpp"

#include <functional>
#include <random>

#include "tce/joint_space.hpp"
#include "tce/model.hpp"
#include "tce/ops.hpp"
#include "tce/query_encoder.hpp"
#include "tce/video_encoder.hpp"

namespace tce {

namespace {

constexpr std::size_t kDim = 6;

Tensor uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Fixed random linear read-out, so every output coordinate matters.
Var probe(Graph& g, Var x, const Tensor& weights) { return sum_all(mul(x, g.constant(weights))); }

// Only parameters under `prefix` are perturbed.
void focus(ParamStore& store, std::string_view prefix) {
  for (auto& [name, p] : store.entries()) p.trainable = p.trainable && name.starts_with(prefix);
}

QueryEncoderConfig query_config() {
  QueryEncoderConfig q;
  q.vocab_size = 12;
  q.d_w = 5;
  q.d_t = kDim;
  q.d_ta = 4;
  return q;
}

VideoEncoderConfig video_config() {
  VideoEncoderConfig v;
  v.frame_dim = 5;
  v.d_v = kDim;
  v.heads = 2;
  v.head_dim = 3;
  v.d_va = 4;
  return v;
}

FrameFeatures frames(Rng& rng) {
  // 5 slots, 4 real frames: exercises the mask everywhere
  return fit_frames(uniform(4, 5, rng), 5, "probe");
}

using Case = std::function<GradCheckReport(Rng&, const GradCheckOptions&)>;

GradCheckReport treelstm(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  init_query_params(store, query_config(), rng);
  focus(store, "query.tree.");
  Tensor lh = uniform(3, kDim, rng), lc = uniform(3, kDim, rng), rh = uniform(3, kDim, rng), rc = uniform(3, kDim, rng);
  Tensor wh = uniform(3, kDim, rng), wc = uniform(3, kDim, rng);
  return grad_check(
      [&](Graph& g) {
        ComposedNodes p = compose_pairs(g, g.constant(lh), g.constant(lc), g.constant(rh), g.constant(rc));
        return add(probe(g, p.h, wh), probe(g, p.c, wc));
      },
      store, opt);
}

GradCheckReport scorer(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = query_config();
  init_query_params(store, cfg, rng);
  focus(store, "query.score.");
  Tensor cand = uniform(4, kDim, rng), leaves = uniform(5, kDim, rng), w = uniform(1, 4, rng);
  return grad_check(
      [&](Graph& g) {
        GlobalMemory mem = make_memory(g, g.constant(leaves), cfg);
        return probe(g, score_candidates(g, g.constant(cand), mem, cfg).probs, w);
      },
      store, opt);
}

GradCheckReport constituent_attention(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  auto cfg = query_config();
  cfg.attend_leaves = true;
  init_query_params(store, cfg, rng);
  focus(store, "query.attn.");
  Tensor leaves = uniform(5, kDim, rng), nodes = uniform(4, kDim, rng), w = uniform(1, kDim, rng);
  return grad_check(
      [&](Graph& g) {
        TreeBuild build;
        build.tree.leaves.resize(5);
        build.leaves = g.constant(leaves);
        build.constituents = g.constant(nodes);
        return probe(g, attend_constituents(g, build, cfg), w);
      },
      store, opt);
}

GradCheckReport query_encoder(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = query_config();
  init_query_params(store, cfg, rng);
  const std::vector<std::size_t> tokens{3, 7, 2, 11, 5};
  Tensor w = uniform(1, kDim, rng);
  return grad_check([&](Graph& g) { return probe(g, encode_query(g, tokens, cfg, nullptr).embedding, w); }, store,
                    opt);
}

GradCheckReport gru(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = video_config();
  init_video_params(store, cfg, rng);
  focus(store, "video.gru.");
  FrameFeatures f = frames(rng);
  Tensor w = uniform(5, kDim, rng);
  return grad_check([&](Graph& g) { return probe(g, gru_encode(g, f, cfg), w); }, store, opt);
}

GradCheckReport multihead(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = video_config();
  init_video_params(store, cfg, rng);
  focus(store, "video.mha.");
  Tensor seq = uniform(5, kDim, rng), w = uniform(5, kDim, rng);
  const std::vector<bool> mask{true, true, false, true, true};
  return grad_check(
      [&](Graph& g) { return probe(g, multihead_self_attention(g, g.constant(seq), mask, cfg).sequence, w); }, store,
      opt);
}

GradCheckReport temporal_attention(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = video_config();
  init_video_params(store, cfg, rng);
  focus(store, "video.attn.");
  Tensor seq = uniform(5, kDim, rng), w = uniform(1, kDim, rng);
  const std::vector<bool> mask{true, false, true, true, true};
  return grad_check([&](Graph& g) { return probe(g, attend_frames(g, g.constant(seq), mask, cfg).embedding, w); },
                    store, opt);
}

GradCheckReport video_encoder(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  const auto cfg = video_config();
  init_video_params(store, cfg, rng);
  FrameFeatures f = frames(rng);
  Tensor w = uniform(1, kDim, rng);
  return grad_check([&](Graph& g) { return probe(g, encode_video(g, f, cfg), w); }, store, opt);
}

GradCheckReport projections_mode(Rng& rng, const GradCheckOptions& opt, bool train) {
  ParamStore store;
  JointConfig cfg;
  cfg.d_star = 4;
  cfg.use_projections = true;
  init_joint_params(store, cfg, kDim, 5, rng);
  Tensor q = uniform(4, kDim, rng), v = uniform(4, 5, rng), wq = uniform(4, 4, rng), wv = uniform(4, 4, rng);
  return grad_check(
      [&](Graph& g) {
        return add(probe(g, project(g, g.constant(q), Side::query, cfg, train), wq),
                   probe(g, project(g, g.constant(v), Side::video, cfg, train), wv));
      },
      store, opt);
}

GradCheckReport projections(Rng& rng, const GradCheckOptions& opt) { return projections_mode(rng, opt, true); }

// Batch statistics cancel the affine bias exactly; running statistics do not.
GradCheckReport projections_inference(Rng& rng, const GradCheckOptions& opt) {
  return projections_mode(rng, opt, false);
}

GradCheckReport ranking(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  store.add("similarity", uniform(6, 6, rng));
  return grad_check([&](Graph& g) { return ranking_loss(g.param("similarity"), 0.5, 2); }, store, opt);
}

GradCheckReport joint_loss(Rng& rng, const GradCheckOptions& opt) {
  ParamStore store;
  JointConfig cfg;
  cfg.d_star = 4;
  cfg.use_projections = true;
  cfg.margin = 0.5;
  cfg.n_hard = 2;
  init_joint_params(store, cfg, kDim, 5, rng);
  Tensor q = uniform(5, kDim, rng), v = uniform(5, 5, rng);
  return grad_check(
      [&](Graph& g) {
        Var s = similarity_matrix(project(g, g.constant(q), Side::query, cfg, true),
                                  project(g, g.constant(v), Side::video, cfg, true));
        return ranking_loss(s, cfg.margin, cfg.n_hard);
      },
      store, opt);
}

// Whole model on three pairs; selection frozen to argmax so the loss is
// locally smooth. Two pairs would leave batch-norm outputs at +-1 and every
// upstream gradient at zero.
GradCheckReport full_loss(Rng& rng, const GradCheckOptions& opt) {
  RunConfig cfg;
  cfg.d_w = 5;
  cfg.d_t = cfg.d_v = cfg.d_star = kDim;
  cfg.d_ta = cfg.d_va = 4;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.frames = 5;
  cfg.frame_dim = 5;
  cfg.margin = 0.5;
  cfg.n_hard = 2;
  cfg.seed = rng();
  Vocabulary vocab;
  for (const char* w : {"a", "dog", "runs", "on", "grass", "cat", "sleeps"}) vocab.add(w);
  TceModel model(cfg, vocab);
  const std::vector<std::vector<std::size_t>> tokens{
      vocab.encode("a dog runs on grass"), vocab.encode("cat sleeps"), vocab.encode("a cat runs")};
  std::vector<FrameFeatures> clips;
  for (std::size_t i = 0; i < 3; ++i) clips.push_back(model.fit(uniform(3 + i, 5, rng)));
  const std::vector<const FrameFeatures*> ptrs{&clips[0], &clips[1], &clips[2]};
  return grad_check(
      [&](Graph& g) {
        Var s = similarity_matrix(model.embed_queries(g, tokens, true, nullptr), model.embed_videos(g, ptrs, true));
        return ranking_loss(s, cfg.margin, cfg.n_hard);
      },
      model.params(), opt);
}

const std::vector<std::pair<std::string, Case>>& cases() {
  static const std::vector<std::pair<std::string, Case>> all{
      {"treelstm_cell", treelstm},
      {"memory_scorer", scorer},
      {"constituent_attention", constituent_attention},
      {"query_encoder", query_encoder},
      {"gru", gru},
      {"multihead_attention", multihead},
      {"temporal_attention", temporal_attention},
      {"video_encoder", video_encoder},
      {"projections", projections},
      {"projections_inference", projections_inference},
      {"ranking_loss", ranking},
      {"joint_loss", joint_loss},
      {"full_loss", full_loss},
  };
  return all;
}

}  // namespace

const std::vector<std::string>& gradient_suite_modules() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : cases()) n.push_back(name);
    return n;
  }();
  return names;
}

std::vector<GradientSuiteEntry> run_gradient_suite(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradientSuiteEntry> out;
  for (std::uint64_t seed : seeds) {
    std::size_t index = 0;
    for (const auto& [name, fn] : cases()) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(index++)};
      Rng rng(seq);
      out.push_back({name, seed, fn(rng, GradCheckOptions{1e-5, seed, 32})});
    }
  }
  return out;
}

}  // namespace tce
