// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/graph.hpp"
#include "tce/param_store.hpp"
#include "tce/tensor.hpp"

namespace tce {

struct JointConfig {
  std::size_t d_star = 512;
  // Without projections the encoders must already emit d_star wide vectors.
  bool use_projections = false;
  double margin = 0.2;
  std::size_t n_hard = 5;
  // Batch-norm then tanh after the (optional) affine map.
  bool normalize = true;
  bool exclude_duplicate_positives = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

enum class Side { query, video };

// Parameters prefixed "joint.q." / "joint.v."; batch-norm running
// statistics are stored as non-trainable buffers next to gain and bias.
void init_joint_params(ParamStore& store, const JointConfig& config, std::size_t d_t, std::size_t d_v, Rng& rng);

/// B x d rows into the joint space. Training mode normalizes with batch
/// statistics (and updates the running ones); otherwise running statistics.
Var project(Graph& g, Var x, Side side, const JointConfig& config, bool train);

/// Plain cosine of two equal-length vectors; zero norm is a NumericalError.
double cosine(const Tensor& q, const Tensor& v);

/// S[i][j] = cos(q_i, v_j).
Var similarity_matrix(Var queries, Var videos);

/// Indices of the n_hard largest off-diagonal entries of row `row`, in
/// descending score order, ties to the lower index. `groups` (optional, one
/// id per column) drops columns sharing the row's group.
std::vector<std::size_t> hard_negatives(const Tensor& s, std::size_t row, std::size_t n_hard,
                                        const std::vector<std::size_t>* groups = nullptr);

/// (1/|N^h|) sum_i sum_{j in N^h_i} max(0, margin + S_ij - S_ii). n_hard is
/// clamped to the number of available negatives.
Var ranking_loss(Var s, double margin, std::size_t n_hard, const std::vector<std::size_t>* groups = nullptr);

// Embedding dump: <prefix>.tcem with "query_embeddings" and
// "video_embeddings", plus <prefix>.index.txt holding "q<TAB>row<TAB>id" and
// "v<TAB>row<TAB>id" lines.
void write_embedding_dump(const std::filesystem::path& prefix, const Tensor& query_embeddings,
                          const std::vector<std::string>& query_ids, const Tensor& video_embeddings,
                          const std::vector<std::string>& video_ids);

}  // namespace tce
