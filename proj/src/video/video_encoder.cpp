// SPDX-License-Identifier: Apache-2.0
#include "tce/video_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tce/binary_io.hpp"
#include "tce/error.hpp"
#include "tce/ops.hpp"

namespace tce {

namespace {

constexpr std::uint32_t kTcefVersion = 1;

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::vector<std::size_t> valid_rows(const std::vector<bool>& mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return rows;
}

// Places `rows` (one per valid position) back into an M-row matrix with zero
// rows at padded positions.
Var scatter_valid(Graph& g, const std::vector<Var>& rows, const std::vector<bool>& mask, std::size_t width) {
  std::vector<Var> parts;
  parts.reserve(mask.size());
  Var zero;
  std::size_t next = 0;
  for (bool keep : mask) {
    if (keep) {
      parts.push_back(rows[next++]);
    } else {
      if (!zero.valid()) zero = g.constant(Tensor::matrix(1, width));
      parts.push_back(zero);
    }
  }
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

}  // namespace

std::size_t FrameFeatures::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

Tensor read_tcef(const std::filesystem::path& path) {
  const std::string what = "frame file " + path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(what + ": cannot open");
  binary::expect_magic(is, "TCEF", what);
  const auto version = binary::read_le<std::uint32_t>(is, what);
  if (version != kTcefVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto m = binary::read_le<std::uint32_t>(is, what);
  const auto d = binary::read_le<std::uint32_t>(is, what);
  if (m == 0 || d == 0) throw FormatError(what + ": empty frame matrix");
  Tensor t = Tensor::matrix(m, d);
  for (double& v : t.data()) v = binary::read_f32(is, what);
  if (!t.all_finite()) throw FormatError(what + ": non-finite feature value");
  return t;
}

void write_tcef(const std::filesystem::path& path, const Tensor& frames) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("frame file " + path.string() + ": cannot open for writing");
  os.write("TCEF", 4);
  binary::write_le<std::uint32_t>(os, kTcefVersion);
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.rows()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.cols()));
  for (double v : frames.data()) binary::write_f32(os, v);
  if (!os) throw FormatError("frame file " + path.string() + ": write failed");
}

FrameFeatures fit_frames(const Tensor& raw, std::size_t m, std::string video_id) {
  if (m == 0) throw ConfigError("fit_frames: frame count must be positive");
  const std::size_t len = raw.rows();
  const std::size_t d = raw.cols();
  FrameFeatures out{Tensor::matrix(m, d), std::vector<bool>(m, false), std::move(video_id)};
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t src;
    if (len > m) {
      // centre of the i-th of m equal segments
      src = std::min(len - 1, ((2 * i + 1) * len) / (2 * m));
    } else if (i < len) {
      src = i;
    } else {
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) out.frames(i, j) = raw(src, j);
    out.mask[i] = true;
  }
  return out;
}

void init_video_params(ParamStore& store, const VideoEncoderConfig& cfg, Rng& rng) {
  if (cfg.frame_dim == 0 || cfg.d_v == 0 || cfg.heads == 0 || cfg.head_dim == 0 || cfg.d_va == 0) {
    throw ConfigError("video encoder: dimensions must be positive");
  }
  const std::size_t d = cfg.d_v;
  if (cfg.rnn == VideoRnn::gru) {
    store.add_uniform("video.gru.w_x", cfg.frame_dim, 3 * d, fan_in_bound(d), rng);
    store.add_uniform("video.gru.w_h", d, 3 * d, fan_in_bound(d), rng);
    store.add_uniform("video.gru.b_x", 1, 3 * d, fan_in_bound(d), rng);
    store.add_uniform("video.gru.b_h", 1, 3 * d, fan_in_bound(d), rng);
  } else {
    store.add_uniform("video.affine.w", cfg.frame_dim, d, fan_in_bound(cfg.frame_dim), rng);
    store.add_uniform("video.affine.b", 1, d, fan_in_bound(cfg.frame_dim), rng);
  }
  if (cfg.use_mha) {
    const std::size_t inner = cfg.heads * cfg.head_dim;
    store.add_uniform("video.mha.w_q", d, inner, fan_in_bound(d), rng);
    store.add_uniform("video.mha.w_k", d, inner, fan_in_bound(d), rng);
    store.add_uniform("video.mha.w_v", d, inner, fan_in_bound(d), rng);
    store.add_uniform("video.mha.w_o", inner, d, fan_in_bound(inner), rng);
    store.add("video.mha.ln_gain", Tensor::matrix(1, d, 1.0));
    store.add("video.mha.ln_bias", Tensor::matrix(1, d, 0.0));
  }
  if (cfg.pool == VideoPool::attn) {
    store.add_uniform("video.attn.w", d, cfg.d_va, fan_in_bound(d), rng);
    store.add_uniform("video.attn.b", 1, cfg.d_va, fan_in_bound(d), rng);
    store.add_uniform("video.attn.u", cfg.d_va, 1, fan_in_bound(cfg.d_va), rng);
  }
}

Var gru_encode(Graph& g, const FrameFeatures& frames, const VideoEncoderConfig& cfg) {
  const std::size_t m = frames.count();
  if (m == 0 || frames.frames.rows() != m) throw ShapeError("gru_encode: empty sequence or mask/frame mismatch");
  const auto rows = valid_rows(frames.mask);
  if (rows.empty()) throw ShapeError("gru_encode: every frame is masked");
  if (frames.frames.cols() != cfg.frame_dim) {
    throw ShapeError("gru_encode: frame dim " + std::to_string(frames.frames.cols()) + " vs configured " +
                     std::to_string(cfg.frame_dim));
  }
  const std::size_t d = cfg.d_v;
  Var x = gather_rows(g.constant(frames.frames), rows);

  std::vector<Var> hidden;
  hidden.reserve(rows.size());
  if (cfg.rnn == VideoRnn::affine) {
    Var y = add(matmul(x, g.param("video.affine.w")), g.param("video.affine.b"));
    for (std::size_t t = 0; t < rows.size(); ++t) hidden.push_back(slice_rows(y, t, 1));
    return scatter_valid(g, hidden, frames.mask, d);
  }

  Var x_proj = add(matmul(x, g.param("video.gru.w_x")), g.param("video.gru.b_x"));
  Var w_h = g.param("video.gru.w_h");
  Var b_h = g.param("video.gru.b_h");
  for (std::size_t t = 0; t < rows.size(); ++t) {
    Var xt = slice_rows(x_proj, t, 1);
    // h W_h + b_h; only the bias survives at the zero initial state
    Var hp = t == 0 ? b_h : add(matmul(hidden.back(), w_h), b_h);
    Var r = sigmoid(add(slice_cols(xt, 0, d), slice_cols(hp, 0, d)));
    Var z = sigmoid(add(slice_cols(xt, d, d), slice_cols(hp, d, d)));
    Var n = tanh(add(slice_cols(xt, 2 * d, d), mul(r, slice_cols(hp, 2 * d, d))));
    // h' = (1 - z) n + z h
    Var h = mul(affine_scalar(z, -1.0, 1.0), n);
    if (t > 0) h = add(h, mul(z, hidden.back()));
    hidden.push_back(h);
  }
  return scatter_valid(g, hidden, frames.mask, d);
}

AttentionOutput multihead_self_attention(Graph& g, Var sequence, const std::vector<bool>& mask,
                                         const VideoEncoderConfig& cfg) {
  const std::size_t di = cfg.head_dim;
  if (sequence.cols() != cfg.d_v || mask.size() != sequence.rows()) {
    throw ShapeError("multihead_self_attention: sequence " + sequence.value().shape_string() + " with mask of " +
                     std::to_string(mask.size()) + " and d_v " + std::to_string(cfg.d_v));
  }
  Var q = matmul(sequence, g.param("video.mha.w_q"));
  Var k = matmul(sequence, g.param("video.mha.w_k"));
  Var v = matmul(sequence, g.param("video.mha.w_v"));
  AttentionOutput out;
  std::vector<Var> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var weights = softmax_rows(scaled_dot_product(slice_cols(q, h * di, di), slice_cols(k, h * di, di)), &mask);
    out.head_weights.push_back(weights.value());
    heads.push_back(matmul(weights, slice_cols(v, h * di, di)));
  }
  Var mixed = matmul(heads.size() == 1 ? heads.front() : concat_cols(heads), g.param("video.mha.w_o"));
  out.sequence = layer_norm_rows(add(sequence, mixed), g.param("video.mha.ln_gain"), g.param("video.mha.ln_bias"),
                                 cfg.ln_eps);
  return out;
}

PoolOutput attend_frames(Graph& g, Var sequence, const std::vector<bool>& mask, const VideoEncoderConfig& cfg) {
  const auto rows = valid_rows(mask);
  if (rows.empty()) throw ShapeError("attend_frames: every frame is masked");
  if (mask.size() != sequence.rows()) throw ShapeError("attend_frames: mask length does not match sequence");
  Var valid = gather_rows(sequence, rows);
  const std::size_t k = rows.size();
  PoolOutput out;
  out.weights.assign(mask.size(), 0.0);
  switch (cfg.pool) {
    case VideoPool::attn: {
      if (k == 1) {
        out.weights[rows[0]] = 1.0;
        out.embedding = valid;
        return out;
      }
      Var hidden = relu(add(matmul(valid, g.param("video.attn.w")), g.param("video.attn.b")));
      Var logits = transpose(scale(matmul(hidden, g.param("video.attn.u")),
                                   1.0 / std::sqrt(static_cast<double>(cfg.d_va))));
      Var eta = softmax_rows(logits);
      for (std::size_t i = 0; i < k; ++i) out.weights[rows[i]] = eta.value()[i];
      out.embedding = matmul(eta, valid);
      return out;
    }
    case VideoPool::avg:
      for (std::size_t r : rows) out.weights[r] = 1.0 / static_cast<double>(k);
      out.embedding = k == 1 ? valid : mean_rows(valid);
      return out;
    case VideoPool::max:
      out.weights.clear();
      out.embedding = k == 1 ? valid : max_rows(valid);
      return out;
    case VideoPool::last:
      out.weights[rows.back()] = 1.0;
      out.embedding = slice_rows(valid, k - 1, 1);
      return out;
  }
  throw ConfigError("attend_frames: unknown pooling mode");
}

Var encode_video(Graph& g, const FrameFeatures& frames, const VideoEncoderConfig& cfg) {
  Var seq = gru_encode(g, frames, cfg);
  if (cfg.use_mha) seq = multihead_self_attention(g, seq, frames.mask, cfg).sequence;
  return attend_frames(g, seq, frames.mask, cfg).embedding;
}

}  // namespace tce
