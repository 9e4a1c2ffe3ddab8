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

/// M frame vectors of one video plus a validity mask (true = real frame).
struct FrameFeatures {
  Tensor frames;  // M x d*_v
  std::vector<bool> mask;
  std::string video_id;

  std::size_t count() const { return mask.size(); }
  std::size_t valid_count() const;
};

// TCEF frame file: "TCEF" | version u32 (=1) | M u32 | d u32 | M*d f32 LE
// row-major. Returns the raw M x d matrix.
Tensor read_tcef(const std::filesystem::path& path);
void write_tcef(const std::filesystem::path& path, const Tensor& frames);

/// Fixes a raw L x d clip to exactly m frames: uniform subsampling when
/// L > m, zero padding (masked out) when L < m.
FrameFeatures fit_frames(const Tensor& raw, std::size_t m, std::string video_id = {});

enum class VideoRnn { gru, affine };
enum class VideoPool { attn, avg, max, last };

struct VideoEncoderConfig {
  std::size_t frame_dim = 2048;
  std::size_t d_v = 512;
  std::size_t heads = 8;
  std::size_t head_dim = 64;
  std::size_t d_va = 256;
  VideoRnn rnn = VideoRnn::gru;
  bool use_mha = true;
  VideoPool pool = VideoPool::attn;
  double ln_eps = 1e-5;
};

// Parameter names, all prefixed "video.".
void init_video_params(ParamStore& store, const VideoEncoderConfig& config, Rng& rng);

/// GRU over the real frames in order, starting from a zero state. Masked
/// positions produce zero rows. The affine ablation maps each real frame
/// independently.
Var gru_encode(Graph& g, const FrameFeatures& frames, const VideoEncoderConfig& config);

struct AttentionOutput {
  Var sequence;
  std::vector<Tensor> head_weights;  // per head, M x M, rows over keys
};

/// LayerNorm(V + W_o concat_i softmax(Q_i K_i^T / sqrt(d_i)) V_i), with padded
/// keys excluded from every softmax.
AttentionOutput multihead_self_attention(Graph& g, Var sequence, const std::vector<bool>& mask,
                                         const VideoEncoderConfig& config);

struct PoolOutput {
  Var embedding;                // 1 x d_v
  std::vector<double> weights;  // per frame; masked frames are 0 (attn/avg/last)
};

/// Temporal attention (or avg / max / last) over the unmasked rows.
PoolOutput attend_frames(Graph& g, Var sequence, const std::vector<bool>& mask, const VideoEncoderConfig& config);

Var encode_video(Graph& g, const FrameFeatures& frames, const VideoEncoderConfig& config);

}  // namespace tce
