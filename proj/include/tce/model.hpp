// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tce/checkpoint.hpp"
#include "tce/graph.hpp"
#include "tce/param_store.hpp"
#include "tce/query_encoder.hpp"
#include "tce/run_config.hpp"
#include "tce/video_encoder.hpp"
#include "tce/vocabulary.hpp"

namespace tce {

/// Query encoder, video encoder and joint space sharing one parameter store.
class TceModel {
 public:
  /// Fresh parameters drawn from config.seed. config.frame_dim must be set.
  TceModel(RunConfig config, Vocabulary vocab);

  // Checkpoint directory: model.tcem, config.txt, vocab.txt.
  static TceModel load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir, StoragePrecision precision = StoragePrecision::f64) const;

  const RunConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const QueryEncoderConfig& query_config() const { return query_cfg_; }
  const VideoEncoderConfig& video_config() const { return video_cfg_; }
  const JointConfig& joint_config() const { return joint_cfg_; }

  FrameFeatures fit(const Tensor& raw, std::string video_id = {}) const;

  /// Joint-space rows, one per query. `rngs` null means eval mode (argmax
  /// selection); otherwise one generator per query drives its Gumbel noise.
  Var embed_queries(Graph& g, const std::vector<std::vector<std::size_t>>& tokens, bool train,
                    std::vector<Rng>* rngs, std::vector<SemanticTree>* trees = nullptr);
  Var embed_videos(Graph& g, const std::vector<const FrameFeatures*>& videos, bool train);

  // Eval-mode embeddings, computed in chunks.
  Tensor query_embeddings(const std::vector<std::string>& queries);
  Tensor video_embeddings(const std::vector<FrameFeatures>& videos);

 private:
  TceModel(RunConfig config, Vocabulary vocab, bool init);
  void load_word_vectors(const std::filesystem::path& path);

  RunConfig config_;
  Vocabulary vocab_;
  ParamStore store_;
  QueryEncoderConfig query_cfg_;
  VideoEncoderConfig video_cfg_;
  JointConfig joint_cfg_;
};

}  // namespace tce
