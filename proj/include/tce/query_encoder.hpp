// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tce/graph.hpp"
#include "tce/param_store.hpp"
#include "tce/tensor.hpp"

namespace tce {

enum class LeafTransform { lstm, affine };
enum class ScoreMode { memory_ctx, global_query };
enum class QueryPool { attn, avg, last };

struct QueryEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_w = 500;
  std::size_t d_t = 512;
  std::size_t d_ta = 256;
  LeafTransform leaf = LeafTransform::lstm;
  ScoreMode score = ScoreMode::memory_ctx;
  QueryPool pool = QueryPool::attn;
  // Pool over leaves as well as constituents.
  bool attend_leaves = false;
  double temperature = 1.0;
};

// Parameter names, all prefixed "query.". Weights are stored input-major
// (in x out) so a row vector times the weight gives the output row.
void init_query_params(ParamStore& store, const QueryEncoderConfig& config, Rng& rng);

/// Half-open token interval.
struct Span {
  std::size_t lo = 0;
  std::size_t hi = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct NodeState {
  Tensor h;  // 1 x d_t
  Tensor c;  // 1 x d_t
  Span span;
};

struct NodeRef {
  bool leaf = true;
  std::size_t index = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Constituent {
  NodeState state;
  NodeRef left;
  NodeRef right;
};

struct TreeLayer {
  std::vector<Span> spans;
  std::vector<NodeRef> nodes;
  Tensor h;  // rows = nodes in this layer
  Tensor c;
};

/// Values recorded while composing a latent tree.
struct SemanticTree {
  std::vector<NodeState> leaves;
  // In merge order; the last one spans every token.
  std::vector<Constituent> constituents;
  // Per round, the position (in that round's layer) of the left child.
  std::vector<std::size_t> merges;
  // Per round, the selection distribution s over candidates.
  std::vector<std::vector<double>> selection_probs;
  // Layer t holds N - t nodes (0-based t).
  std::vector<TreeLayer> layers;
  // Attention weights over the pooled nodes: leaves first when leaves are
  // pooled, then constituents. A single-token tree pools its leaf.
  std::vector<double> node_weights;
  bool weights_include_leaves = false;
};

struct LeafStates {
  Var h;  // N x d_t, also the global memory
  Var c;
};

struct GlobalMemory {
  Var rows;  // N x d_t leaf hidden states
  Var keys;  // sigmoid(M W_m + b_m); only in memory_ctx mode
};

struct ComposedNodes {
  Var h;
  Var c;
};

struct CandidateScores {
  Var probs;                // 1 x K
  Tensor memory_attention;  // K x N, memory_ctx mode only
};

struct Selection {
  Var onehot;  // forward value is exactly one-hot
  Var soft;    // what the gradient flows through in training mode
  std::size_t index = 0;
};

struct TreeBuild {
  SemanticTree tree;
  Var leaves;        // N x d_t
  Var constituents;  // (N - 1) x d_t; invalid when N == 1
};

struct QueryEncoding {
  Var embedding;  // 1 x d_t
  SemanticTree tree;
};

/// Rows of the embedding matrix for each token. Throws "empty query" for an
/// empty sequence and ShapeError for out-of-range indices.
Var embed_tokens(Graph& g, std::span<const std::size_t> tokens, const QueryEncoderConfig& config);

/// LSTM (or the affine ablation) over the word vectors from a zero state.
LeafStates leaf_transform(Graph& g, Var word_vecs, const QueryEncoderConfig& config);

GlobalMemory make_memory(Graph& g, Var leaf_h, const QueryEncoderConfig& config);

/// TreeLSTM over K row-aligned child pairs at once.
ComposedNodes compose_pairs(Graph& g, Var left_h, Var left_c, Var right_h, Var right_c);

/// Single-pair composition on plain values; the spans must be adjacent.
NodeState treelstm_compose(const NodeState& left, const NodeState& right, ParamStore& params);

CandidateScores score_candidates(Graph& g, Var candidate_h, const GlobalMemory& memory,
                                 const QueryEncoderConfig& config);

/// Training mode (rng given): Gumbel noise on log s, softened at the
/// temperature, hard one-hot forward, soft backward. Eval mode (rng null):
/// plain argmax with no gradient path. Ties go to the lowest index.
Selection st_gumbel_select(Graph& g, Var probs, double temperature, Rng* rng);
// Training mode with caller-supplied noise (1 x K).
Selection st_gumbel_select(Graph& g, Var probs, double temperature, const Tensor& gumbel_noise);
Tensor sample_gumbel(std::size_t k, Rng& rng);

TreeBuild build_tree(Graph& g, const LeafStates& leaves, const QueryEncoderConfig& config, Rng* rng);

/// Pools the constituents (and optionally leaves) into the query embedding
/// and stores the weights in build.tree.node_weights.
Var attend_constituents(Graph& g, TreeBuild& build, const QueryEncoderConfig& config);

QueryEncoding encode_query(Graph& g, std::span<const std::size_t> tokens, const QueryEncoderConfig& config,
                           Rng* rng);

}  // namespace tce
