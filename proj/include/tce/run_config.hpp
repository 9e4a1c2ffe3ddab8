// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "tce/joint_space.hpp"
#include "tce/query_encoder.hpp"
#include "tce/video_encoder.hpp"

namespace tce {

/// Every hyperparameter of a run. The text form is one `key=value` per line,
/// keys spelled exactly as the fields below; '#' starts a comment.
struct RunConfig {
  // query side
  std::size_t d_w = 500;
  std::size_t d_t = 512;
  std::size_t d_ta = 256;
  double temperature = 1.0;
  LeafTransform leaf = LeafTransform::lstm;
  ScoreMode score = ScoreMode::memory_ctx;
  QueryPool query_pool = QueryPool::attn;
  bool attend_leaves = false;
  // whitespace separated "token v1 ... v_dw" lines; empty = random init
  std::string word_vectors;

  // video side
  std::size_t frame_dim = 0;  // 0 = taken from the data
  std::size_t d_v = 512;
  std::size_t d_va = 256;
  std::size_t heads = 8;
  std::size_t head_dim = 64;
  std::size_t frames = 16;
  VideoRnn video_rnn = VideoRnn::gru;
  bool use_mha = true;
  VideoPool video_pool = VideoPool::attn;

  // joint space and loss
  std::size_t d_star = 512;
  bool use_projections = false;
  bool normalize = true;
  double margin = 0.2;
  std::size_t n_hard = 5;
  bool exclude_duplicate_positives = false;

  // optimisation
  double lr = 0.0005;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  QueryEncoderConfig query(std::size_t vocab_size) const;
  VideoEncoderConfig video() const;
  JointConfig joint() const;

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace tce
