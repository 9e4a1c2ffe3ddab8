// SPDX-License-Identifier: Apache-2.0
#include "tce/model.hpp"

#include <fstream>
#include <sstream>

#include "tce/error.hpp"
#include "tce/joint_space.hpp"
#include "tce/ops.hpp"

namespace tce {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalChunk = 64;

}  // namespace

TceModel::TceModel(RunConfig config, Vocabulary vocab) : TceModel(std::move(config), std::move(vocab), true) {}

TceModel::TceModel(RunConfig config, Vocabulary vocab, bool init)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  if (config_.frame_dim == 0) throw ConfigError("model: frame_dim is unknown; set it or load data first");
  query_cfg_ = config_.query(vocab_.size());
  video_cfg_ = config_.video();
  joint_cfg_ = config_.joint();
  Rng rng(config_.seed);
  init_query_params(store_, query_cfg_, rng);
  init_video_params(store_, video_cfg_, rng);
  init_joint_params(store_, joint_cfg_, config_.d_t, config_.d_v, rng);
  if (init && !config_.word_vectors.empty()) load_word_vectors(config_.word_vectors);
}

void TceModel::load_word_vectors(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("word vectors " + path.string() + ": cannot open");
  Tensor& emb = store_.value("query.embedding");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> values;
    for (double v; ls >> v;) values.push_back(v);
    if (!ls.eof() || values.size() != config_.d_w) {
      throw FormatError("word vectors " + path.string() + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(config_.d_w) + " numbers after the token");
    }
    const std::size_t row = vocab_.index_of(token);
    if (row == Vocabulary::kUnk && token != Vocabulary::kUnkToken) continue;
    for (std::size_t j = 0; j < values.size(); ++j) emb(row, j) = values[j];
  }
}

TceModel TceModel::load(const fs::path& dir) {
  RunConfig cfg = RunConfig::load(dir / "config.txt");
  TceModel model(std::move(cfg), Vocabulary::load(dir / "vocab.txt"), false);
  load_checkpoint(dir / "model.tcem", model.store_);
  return model;
}

void TceModel::save(const fs::path& dir, StoragePrecision precision) const {
  fs::create_directories(dir);
  save_checkpoint(dir / "model.tcem", store_, precision);
  config_.save(dir / "config.txt");
  vocab_.save(dir / "vocab.txt");
}

FrameFeatures TceModel::fit(const Tensor& raw, std::string video_id) const {
  if (raw.cols() != config_.frame_dim) {
    throw FormatError("video " + video_id + ": feature width " + std::to_string(raw.cols()) +
                      " but the model expects " + std::to_string(config_.frame_dim));
  }
  return fit_frames(raw, config_.frames, std::move(video_id));
}

Var TceModel::embed_queries(Graph& g, const std::vector<std::vector<std::size_t>>& tokens, bool train,
                            std::vector<Rng>* rngs, std::vector<SemanticTree>* trees) {
  if (tokens.empty()) throw ShapeError("embed_queries: no queries");
  if (rngs != nullptr && rngs->size() != tokens.size()) throw ShapeError("embed_queries: one generator per query");
  std::vector<Var> rows;
  rows.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    QueryEncoding enc = encode_query(g, tokens[i], query_cfg_, rngs ? &(*rngs)[i] : nullptr);
    rows.push_back(enc.embedding);
    if (trees) trees->push_back(std::move(enc.tree));
  }
  Var q = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return project(g, q, Side::query, joint_cfg_, train);
}

Var TceModel::embed_videos(Graph& g, const std::vector<const FrameFeatures*>& videos, bool train) {
  if (videos.empty()) throw ShapeError("embed_videos: no videos");
  std::vector<Var> rows;
  rows.reserve(videos.size());
  for (const FrameFeatures* f : videos) rows.push_back(encode_video(g, *f, video_cfg_));
  Var v = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return project(g, v, Side::video, joint_cfg_, train);
}

Tensor TceModel::query_embeddings(const std::vector<std::string>& queries) {
  if (queries.empty()) throw ShapeError("query_embeddings: no queries");
  Tensor out = Tensor::matrix(queries.size(), config_.d_star);
  for (std::size_t start = 0; start < queries.size(); start += kEvalChunk) {
    const std::size_t end = std::min(queries.size(), start + kEvalChunk);
    std::vector<std::vector<std::size_t>> tokens;
    for (std::size_t i = start; i < end; ++i) tokens.push_back(vocab_.encode(queries[i]));
    Graph g(&store_);
    const Tensor rows = embed_queries(g, tokens, false, nullptr).value();
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = rows(i - start, j);
  }
  return out;
}

Tensor TceModel::video_embeddings(const std::vector<FrameFeatures>& videos) {
  if (videos.empty()) throw ShapeError("video_embeddings: no videos");
  Tensor out = Tensor::matrix(videos.size(), config_.d_star);
  for (std::size_t start = 0; start < videos.size(); start += kEvalChunk) {
    const std::size_t end = std::min(videos.size(), start + kEvalChunk);
    std::vector<const FrameFeatures*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&videos[i]);
    Graph g(&store_);
    const Tensor rows = embed_videos(g, chunk, false).value();
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = rows(i - start, j);
  }
  return out;
}

}  // namespace tce
