// SPDX-License-Identifier: Apache-2.0
#include "tce/query_encoder.hpp"

#include <cmath>
#include <limits>

#include "tce/error.hpp"
#include "tce/ops.hpp"

namespace tce {

namespace {

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

Tensor one_hot(std::size_t k, std::size_t index) {
  Tensor t = Tensor::matrix(1, k);
  t[index] = 1.0;
  return t;
}

// Lowest index wins ties.
std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double top_gap(std::span<const double> v, std::size_t best) {
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != best) second = std::max(second, v[i]);
  }
  return v[best] - second;
}

// Rows [lo, hi) of a, or an invalid Var when the range is empty.
Var rows_or_none(Var a, std::size_t lo, std::size_t hi) {
  if (hi <= lo) return Var{};
  return slice_rows(a, lo, hi - lo);
}

Var splice_row(Var layer, std::size_t at, Var replacement) {
  const std::size_t n = layer.rows();
  std::vector<Var> parts;
  if (Var before = rows_or_none(layer, 0, at); before.valid()) parts.push_back(before);
  parts.push_back(replacement);
  if (Var after = rows_or_none(layer, at + 2, n); after.valid()) parts.push_back(after);
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

// Scores an attention pool: softmax(u^T relu(W x + b) / sqrt(d_a)) over rows.
Var attention_logits(Graph& g, Var rows, const char* w, const char* b, const char* u, std::size_t d_a) {
  Var hidden = relu(add(matmul(rows, g.param(w)), g.param(b)));
  return transpose(scale(matmul(hidden, g.param(u)), 1.0 / std::sqrt(static_cast<double>(d_a))));
}

}  // namespace

void init_query_params(ParamStore& store, const QueryEncoderConfig& cfg, Rng& rng) {
  if (cfg.vocab_size < 2 || cfg.d_w == 0 || cfg.d_t == 0 || cfg.d_ta == 0) {
    throw ConfigError("query encoder: vocabulary and dimensions must be positive");
  }
  const std::size_t d = cfg.d_t;
  store.add_normal("query.embedding", cfg.vocab_size, cfg.d_w, 1.0, rng);
  if (cfg.leaf == LeafTransform::lstm) {
    store.add_uniform("query.leaf.w_x", cfg.d_w, 4 * d, fan_in_bound(d), rng);
    store.add_uniform("query.leaf.w_h", d, 4 * d, fan_in_bound(d), rng);
    store.add_uniform("query.leaf.b", 1, 4 * d, fan_in_bound(d), rng);
  } else {
    store.add_uniform("query.leaf.w", cfg.d_w, 2 * d, fan_in_bound(cfg.d_w), rng);
    store.add_uniform("query.leaf.b", 1, 2 * d, fan_in_bound(cfg.d_w), rng);
  }
  store.add_uniform("query.tree.w", 2 * d, 5 * d, fan_in_bound(2 * d), rng);
  store.add_uniform("query.tree.b", 1, 5 * d, fan_in_bound(2 * d), rng);
  if (cfg.score == ScoreMode::memory_ctx) {
    store.add_uniform("query.score.w_m", d, d, fan_in_bound(d), rng);
    store.add_uniform("query.score.b_m", 1, d, fan_in_bound(d), rng);
    store.add_uniform("query.score.w_s", 2 * d, 2 * d, fan_in_bound(2 * d), rng);
    store.add_uniform("query.score.b_s", 1, 2 * d, fan_in_bound(2 * d), rng);
    store.add_uniform("query.score.u", 2 * d, 1, fan_in_bound(2 * d), rng);
  } else {
    store.add_uniform("query.score.global", d, 1, fan_in_bound(d), rng);
  }
  if (cfg.pool == QueryPool::attn) {
    store.add_uniform("query.attn.w", d, cfg.d_ta, fan_in_bound(d), rng);
    store.add_uniform("query.attn.b", 1, cfg.d_ta, fan_in_bound(d), rng);
    store.add_uniform("query.attn.u", cfg.d_ta, 1, fan_in_bound(cfg.d_ta), rng);
  }
}

Var embed_tokens(Graph& g, std::span<const std::size_t> tokens, const QueryEncoderConfig& cfg) {
  if (tokens.empty()) throw ShapeError("empty query");
  for (std::size_t t : tokens) {
    if (t >= cfg.vocab_size) {
      throw ShapeError("embed_tokens: index " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }
  return gather_rows(g.param("query.embedding"), tokens);
}

LeafStates leaf_transform(Graph& g, Var word_vecs, const QueryEncoderConfig& cfg) {
  const std::size_t d = cfg.d_t;
  if (cfg.leaf == LeafTransform::affine) {
    Var hc = add(matmul(word_vecs, g.param("query.leaf.w")), g.param("query.leaf.b"));
    return {slice_cols(hc, 0, d), slice_cols(hc, d, d)};
  }
  const std::size_t n = word_vecs.rows();
  Var x_proj = add(matmul(word_vecs, g.param("query.leaf.w_x")), g.param("query.leaf.b"));
  Var w_h = g.param("query.leaf.w_h");
  std::vector<Var> hs, cs;
  hs.reserve(n);
  cs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Var gates = slice_rows(x_proj, t, 1);
    if (t > 0) gates = add(gates, matmul(hs.back(), w_h));
    Var i = sigmoid(slice_cols(gates, 0, d));
    Var f = sigmoid(slice_cols(gates, d, d));
    Var cand = tanh(slice_cols(gates, 2 * d, d));
    Var o = sigmoid(slice_cols(gates, 3 * d, d));
    // zero initial cell: the forget term vanishes at t = 0
    Var c = t == 0 ? mul(i, cand) : add(mul(f, cs.back()), mul(i, cand));
    hs.push_back(mul(o, tanh(c)));
    cs.push_back(c);
  }
  if (n == 1) return {hs.front(), cs.front()};
  return {concat_rows(hs), concat_rows(cs)};
}

GlobalMemory make_memory(Graph& g, Var leaf_h, const QueryEncoderConfig& cfg) {
  GlobalMemory mem{leaf_h, Var{}};
  if (cfg.score == ScoreMode::memory_ctx) {
    mem.keys = sigmoid(add(matmul(leaf_h, g.param("query.score.w_m")), g.param("query.score.b_m")));
  }
  return mem;
}

ComposedNodes compose_pairs(Graph& g, Var left_h, Var left_c, Var right_h, Var right_c) {
  const std::size_t d = left_h.cols();
  Var z = add(matmul(concat_cols({left_h, right_h}), g.param("query.tree.w")), g.param("query.tree.b"));
  Var i = sigmoid(slice_cols(z, 0, d));
  Var f_l = sigmoid(slice_cols(z, d, d));
  Var f_r = sigmoid(slice_cols(z, 2 * d, d));
  Var o = sigmoid(slice_cols(z, 3 * d, d));
  Var cand = tanh(slice_cols(z, 4 * d, d));
  Var c = add(add(mul(f_l, left_c), mul(f_r, right_c)), mul(i, cand));
  return {mul(o, tanh(c)), c};
}

NodeState treelstm_compose(const NodeState& left, const NodeState& right, ParamStore& params) {
  if (left.span.hi != right.span.lo) {
    throw ShapeError("treelstm_compose: spans [" + std::to_string(left.span.lo) + ", " +
                     std::to_string(left.span.hi) + ") and [" + std::to_string(right.span.lo) + ", " +
                     std::to_string(right.span.hi) + ") are not adjacent");
  }
  Graph g(&params);
  ComposedNodes p = compose_pairs(g, g.constant(left.h), g.constant(left.c), g.constant(right.h),
                                  g.constant(right.c));
  return {p.h.value(), p.c.value(), Span{left.span.lo, right.span.hi}};
}

CandidateScores score_candidates(Graph& g, Var candidate_h, const GlobalMemory& memory,
                                 const QueryEncoderConfig& cfg) {
  const double d = static_cast<double>(cfg.d_t);
  CandidateScores out;
  Var logits;
  if (cfg.score == ScoreMode::global_query) {
    logits = transpose(scale(matmul(candidate_h, g.param("query.score.global")), 1.0 / std::sqrt(d)));
  } else {
    Var attn = softmax_rows(scale(matmul(candidate_h, transpose(memory.keys)), 1.0 / std::sqrt(d)));
    out.memory_attention = attn.value();
    Var context = matmul(attn, memory.rows);
    Var hidden = relu(add(matmul(concat_cols({candidate_h, context}), g.param("query.score.w_s")),
                          g.param("query.score.b_s")));
    logits = transpose(scale(matmul(hidden, g.param("query.score.u")), 1.0 / std::sqrt(2.0 * d)));
  }
  out.probs = softmax_rows(logits);
  return out;
}

Tensor sample_gumbel(std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Tensor noise = Tensor::matrix(1, k);
  for (double& v : noise.data()) {
    double u = 0.0;
    while (u <= 0.0) u = unif(rng);
    v = -std::log(-std::log(u));
  }
  return noise;
}

Selection st_gumbel_select(Graph& g, Var probs, double temperature, const Tensor& gumbel_noise) {
  if (!(temperature > 0.0)) throw ConfigError("st_gumbel_select: temperature must be positive");
  const std::size_t k = probs.cols();
  if (probs.rows() != 1 || gumbel_noise.rows() != 1 || gumbel_noise.cols() != k) {
    throw ShapeError("st_gumbel_select: expected 1 x K probabilities and noise, got " + probs.value().shape_string() +
                     " and " + gumbel_noise.shape_string());
  }
  Var perturbed = scale(add(log(probs), g.constant(gumbel_noise)), 1.0 / temperature);
  Var soft = softmax_rows(perturbed);
  const auto pv = perturbed.value().data();
  const std::size_t index = argmax(pv);
  if (k > 1) g.note_kink(top_gap(pv, index), index);
  return {straight_through(soft, one_hot(k, index)), soft, index};
}

Selection st_gumbel_select(Graph& g, Var probs, double temperature, Rng* rng) {
  if (!(temperature > 0.0)) throw ConfigError("st_gumbel_select: temperature must be positive");
  if (rng != nullptr) return st_gumbel_select(g, probs, temperature, sample_gumbel(probs.cols(), *rng));
  const auto pv = probs.value().data();
  const std::size_t index = argmax(pv);
  if (pv.size() > 1) g.note_kink(top_gap(pv, index), index);
  return {g.constant(one_hot(pv.size(), index)), probs, index};
}

TreeBuild build_tree(Graph& g, const LeafStates& leaves, const QueryEncoderConfig& cfg, Rng* rng) {
  const std::size_t n = leaves.h.rows();
  if (n == 0) throw ShapeError("build_tree: no leaves");
  TreeBuild out;
  out.leaves = leaves.h;
  SemanticTree& tree = out.tree;

  TreeLayer layer;
  for (std::size_t i = 0; i < n; ++i) {
    tree.leaves.push_back({Tensor::row(leaves.h.value().row_vector(i)), Tensor::row(leaves.c.value().row_vector(i)),
                           Span{i, i + 1}});
    layer.spans.push_back(Span{i, i + 1});
    layer.nodes.push_back(NodeRef{true, i});
  }
  layer.h = leaves.h.value();
  layer.c = leaves.c.value();
  tree.layers.push_back(layer);
  if (n == 1) return out;

  const GlobalMemory memory = make_memory(g, leaves.h, cfg);
  Var h = leaves.h;
  Var c = leaves.c;
  std::vector<Var> parents;
  parents.reserve(n - 1);
  for (std::size_t round = 0; round + 1 < n; ++round) {
    const std::size_t k = h.rows() - 1;
    ComposedNodes cand = compose_pairs(g, slice_rows(h, 0, k), slice_rows(c, 0, k), slice_rows(h, 1, k),
                                       slice_rows(c, 1, k));
    std::size_t pick = 0;
    Var parent_h = cand.h;
    Var parent_c = cand.c;
    if (k == 1) {
      tree.selection_probs.push_back({1.0});
    } else {
      CandidateScores scores = score_candidates(g, cand.h, memory, cfg);
      const auto p = scores.probs.value().data();
      tree.selection_probs.emplace_back(p.begin(), p.end());
      Selection sel = st_gumbel_select(g, scores.probs, cfg.temperature, rng);
      pick = sel.index;
      parent_h = matmul(sel.onehot, cand.h);
      parent_c = matmul(sel.onehot, cand.c);
    }
    h = splice_row(h, pick, parent_h);
    c = splice_row(c, pick, parent_c);
    parents.push_back(parent_h);

    const Span merged{layer.spans[pick].lo, layer.spans[pick + 1].hi};
    const NodeRef left = layer.nodes[pick];
    const NodeRef right = layer.nodes[pick + 1];
    tree.constituents.push_back(
        {NodeState{parent_h.value(), parent_c.value(), merged}, left, right});
    tree.merges.push_back(pick);

    TreeLayer next;
    for (std::size_t i = 0; i < layer.spans.size(); ++i) {
      if (i == pick + 1) continue;
      next.spans.push_back(i == pick ? merged : layer.spans[i]);
      next.nodes.push_back(i == pick ? NodeRef{false, tree.constituents.size() - 1} : layer.nodes[i]);
    }
    next.h = h.value();
    next.c = c.value();
    tree.layers.push_back(std::move(next));
    layer = tree.layers.back();
  }
  out.constituents = parents.size() == 1 ? parents.front() : concat_rows(parents);
  return out;
}

Var attend_constituents(Graph& g, TreeBuild& build, const QueryEncoderConfig& cfg) {
  SemanticTree& tree = build.tree;
  const std::size_t n_leaves = tree.leaves.size();
  Var pool;
  if (n_leaves == 1) {
    pool = build.leaves;
  } else if (cfg.attend_leaves) {
    pool = concat_rows({build.leaves, build.constituents});
  } else {
    pool = build.constituents;
  }
  tree.weights_include_leaves = cfg.attend_leaves || n_leaves == 1;
  const std::size_t k = pool.rows();
  if (k == 1) {
    tree.node_weights = {1.0};
    return pool;
  }

  switch (cfg.pool) {
    case QueryPool::attn: {
      Var beta = softmax_rows(attention_logits(g, pool, "query.attn.w", "query.attn.b", "query.attn.u", cfg.d_ta));
      const auto w = beta.value().data();
      tree.node_weights.assign(w.begin(), w.end());
      return matmul(beta, pool);
    }
    case QueryPool::avg:
      tree.node_weights.assign(k, 1.0 / static_cast<double>(k));
      return mean_rows(pool);
    case QueryPool::last:
      tree.node_weights.assign(k, 0.0);
      tree.node_weights.back() = 1.0;
      return slice_rows(pool, k - 1, 1);
  }
  throw ConfigError("attend_constituents: unknown pooling mode");
}

QueryEncoding encode_query(Graph& g, std::span<const std::size_t> tokens, const QueryEncoderConfig& cfg, Rng* rng) {
  Var words = embed_tokens(g, tokens, cfg);
  LeafStates leaves = leaf_transform(g, words, cfg);
  TreeBuild build = build_tree(g, leaves, cfg, rng);
  Var q = attend_constituents(g, build, cfg);
  return {q, std::move(build.tree)};
}

}  // namespace tce
