// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tce/tensor.hpp"
#include "tce/video_encoder.hpp"
#include "tce/vocabulary.hpp"

namespace tce {

struct DatasetRecord {
  std::string query;
  std::string video_id;
};

/// Query/video pairs plus the frame features of every referenced video.
/// Several records may share one video.
struct Dataset {
  std::vector<DatasetRecord> records;
  std::vector<std::string> video_ids;  // unique, first-appearance order
  std::vector<Tensor> raw_frames;      // parallel to video_ids, L x d each
  std::vector<std::size_t> record_video;  // record -> index into video_ids

  std::size_t frame_dim() const { return raw_frames.empty() ? 0 : raw_frames.front().cols(); }
  /// Subset holding the given records and only the videos they use.
  Dataset subset(const std::vector<std::size_t>& record_indices) const;
};

/// Manifest is JSON Lines with "query" and "video_id" string fields; frames
/// live at <features_dir>/<video_id>.tcef.
Dataset load_dataset(const std::filesystem::path& manifest, const std::filesystem::path& features_dir);
/// <dir>/manifest.jsonl with <dir>/features/.
Dataset load_dataset_dir(const std::filesystem::path& dir);

/// <dir>/vocab.txt when present, otherwise built from the records in order.
Vocabulary dataset_vocabulary(const std::filesystem::path& dir, const Dataset& data);
Vocabulary build_vocabulary(const Dataset& data);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  // True when the held-out part had fewer than two videos and validation
  // falls back to the training pairs.
  bool val_is_train = false;
};

std::uint64_t fnv1a(std::string_view text);

/// Holds out a video (with all its records) when fnv1a(video_id) % 10000 <
/// fraction * 10000.
DatasetSplit split_dataset(const Dataset& data, double val_fraction);

struct SyntheticOptions {
  std::size_t pairs = 32;
  std::size_t vocab_size = 50;  // distinct words, reserved tokens excluded
  std::size_t frame_dim = 32;
  std::size_t min_frames = 6;
  std::size_t max_frames = 24;
  double frame_noise = 0.3;
  std::uint64_t seed = 7;
};

/// Writes manifest.jsonl, features/<id>.tcef and vocab.txt. Each pair owns a
/// distinct triple of content words; the video plays the latent vectors of
/// the three words in query order, plus noise. Function words carry no
/// visual signal.
void generate_synthetic(const std::filesystem::path& dir, const SyntheticOptions& options);

}  // namespace tce
