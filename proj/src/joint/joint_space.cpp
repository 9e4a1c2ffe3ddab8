// SPDX-License-Identifier: Apache-2.0
#include "tce/joint_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tce/checkpoint.hpp"
#include "tce/error.hpp"
#include "tce/ops.hpp"

namespace tce {

namespace {

std::string prefix_of(Side side) { return side == Side::query ? "joint.q." : "joint.v."; }

void add_side(ParamStore& store, const JointConfig& cfg, Side side, std::size_t in, Rng& rng) {
  const std::string p = prefix_of(side);
  if (cfg.use_projections) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    store.add_uniform(p + "w", in, cfg.d_star, bound, rng);
    store.add_uniform(p + "b", 1, cfg.d_star, bound, rng);
  }
  if (cfg.normalize) {
    store.add(p + "bn_gain", Tensor::matrix(1, cfg.d_star, 1.0));
    store.add(p + "bn_bias", Tensor::matrix(1, cfg.d_star, 0.0));
    store.add(p + "bn_mean", Tensor::matrix(1, cfg.d_star, 0.0), false);
    store.add(p + "bn_var", Tensor::matrix(1, cfg.d_star, 1.0), false);
  }
}

}  // namespace

void init_joint_params(ParamStore& store, const JointConfig& cfg, std::size_t d_t, std::size_t d_v, Rng& rng) {
  if (cfg.d_star == 0) throw ConfigError("joint space: d* must be positive");
  if (!(cfg.margin > 0.0 && cfg.margin < 1.0)) throw ConfigError("joint space: margin must lie in (0, 1)");
  if (cfg.n_hard == 0) throw ConfigError("joint space: n_hard must be at least 1");
  if (!cfg.use_projections && (d_t != cfg.d_star || d_v != cfg.d_star)) {
    throw ConfigError("joint space: without projections d_t (" + std::to_string(d_t) + ") and d_v (" +
                      std::to_string(d_v) + ") must equal d* (" + std::to_string(cfg.d_star) + ")");
  }
  add_side(store, cfg, Side::query, d_t, rng);
  add_side(store, cfg, Side::video, d_v, rng);
}

Var project(Graph& g, Var x, Side side, const JointConfig& cfg, bool train) {
  const std::string p = prefix_of(side);
  Var y = x;
  if (cfg.use_projections) {
    y = add(matmul(x, g.param(p + "w")), g.param(p + "b"));
  } else if (x.cols() != cfg.d_star) {
    throw ShapeError("project: input width " + std::to_string(x.cols()) + " vs d* " + std::to_string(cfg.d_star));
  }
  if (!cfg.normalize) return y;
  ParamStore* store = g.store();
  if (store == nullptr) throw ConfigError("project: graph has no parameter store");
  BatchNormState state{&store->at(p + "bn_mean").value, &store->at(p + "bn_var").value, cfg.bn_momentum,
                       cfg.bn_eps};
  return tanh(batch_norm(y, g.param(p + "bn_gain"), g.param(p + "bn_bias"), state, train));
}

double cosine(const Tensor& q, const Tensor& v) {
  if (q.size() != v.size()) throw ShapeError("cosine: " + q.shape_string() + " vs " + v.shape_string());
  double dot = 0.0, nq = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    dot += q[i] * v[i];
    nq += q[i] * q[i];
    nv += v[i] * v[i];
  }
  if (nq == 0.0 || nv == 0.0) throw NumericalError("cosine: zero-norm vector (degenerate embedding)");
  return std::clamp(dot / (std::sqrt(nq) * std::sqrt(nv)), -1.0, 1.0);
}

Var similarity_matrix(Var queries, Var videos) {
  if (queries.rows() != videos.rows()) {
    throw ShapeError("similarity_matrix: " + std::to_string(queries.rows()) + " queries vs " +
                     std::to_string(videos.rows()) + " videos");
  }
  return matmul(l2_normalize_rows(queries), transpose(l2_normalize_rows(videos)));
}

std::vector<std::size_t> hard_negatives(const Tensor& s, std::size_t row, std::size_t n_hard,
                                        const std::vector<std::size_t>* groups) {
  std::vector<std::size_t> cand;
  for (std::size_t j = 0; j < s.cols(); ++j) {
    if (j == row) continue;
    if (groups != nullptr && (*groups)[j] == (*groups)[row]) continue;
    cand.push_back(j);
  }
  const std::size_t k = std::min(n_hard, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                    [&](std::size_t a, std::size_t b) { return s(row, a) > s(row, b) || (s(row, a) == s(row, b) && a < b); });
  cand.resize(k);
  return cand;
}

Var ranking_loss(Var s, double margin, std::size_t n_hard, const std::vector<std::size_t>* groups) {
  const Tensor& sv = s.value();
  const std::size_t b = sv.rows();
  if (sv.cols() != b) throw ShapeError("ranking_loss: similarity matrix must be square, got " + sv.shape_string());
  if (b < 2) throw ShapeError("no negatives in batch");
  if (n_hard == 0) throw ConfigError("ranking_loss: n_hard must be at least 1");
  if (groups != nullptr && groups->size() != b) throw ShapeError("ranking_loss: one group id per pair required");
  Graph& g = *s.graph;

  struct Term {
    std::size_t i, j;
    double weight;
  };
  std::vector<Term> active;
  double loss = 0.0;
  bool any_negative = false;
  for (std::size_t i = 0; i < b; ++i) {
    const auto neg = hard_negatives(sv, i, n_hard, groups);
    if (neg.empty()) continue;
    any_negative = true;
    const double w = 1.0 / static_cast<double>(neg.size());
    if (g.tracking_kinks()) {
      // the selection flips when the last chosen and first unchosen swap
      auto all = hard_negatives(sv, i, b, groups);
      if (all.size() > neg.size()) g.note_kink(sv(i, all[neg.size() - 1]) - sv(i, all[neg.size()]), 0);
      for (std::size_t j : neg) g.note_kink(margin + sv(i, j) - sv(i, i), j * 2 + (margin + sv(i, j) - sv(i, i) > 0));
    }
    for (std::size_t j : neg) {
      const double hinge = margin + sv(i, j) - sv(i, i);
      if (hinge > 0.0) {
        loss += w * hinge;
        active.push_back({i, j, w});
      }
    }
  }
  if (!any_negative) throw ShapeError("no negatives in batch");
  return g.record("ranking_loss", Tensor::scalar(loss), {s},
                  [s, active = std::move(active)](Graph& gr, const Tensor&, const Tensor& dy) {
                    Tensor* ds = gr.grad_slot(s);
                    if (ds == nullptr) return;
                    const double up = dy[0];
                    for (const Term& t : active) {
                      (*ds)(t.i, t.j) += up * t.weight;
                      (*ds)(t.i, t.i) -= up * t.weight;
                    }
                  });
}

void write_embedding_dump(const std::filesystem::path& prefix, const Tensor& query_embeddings,
                          const std::vector<std::string>& query_ids, const Tensor& video_embeddings,
                          const std::vector<std::string>& video_ids) {
  if (query_embeddings.rows() != query_ids.size() || video_embeddings.rows() != video_ids.size()) {
    throw ShapeError("embedding dump: id count does not match embedding rows");
  }
  std::filesystem::path tensors = prefix;
  tensors += ".tcem";
  write_tensors(tensors, {{"query_embeddings", query_embeddings}, {"video_embeddings", video_embeddings}});
  std::filesystem::path index = prefix;
  index += ".index.txt";
  std::ofstream os(index, std::ios::trunc);
  if (!os) throw FormatError("embedding dump: cannot write " + index.string());
  for (std::size_t r = 0; r < query_ids.size(); ++r) os << "q\t" << r << '\t' << query_ids[r] << '\n';
  for (std::size_t r = 0; r < video_ids.size(); ++r) os << "v\t" << r << '\t' << video_ids[r] << '\n';
}

}  // namespace tce
