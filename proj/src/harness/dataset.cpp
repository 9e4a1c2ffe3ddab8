// SPDX-License-Identifier: Apache-2.0
#include "tce/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "tce/error.hpp"
#include "tce/param_store.hpp"

namespace tce {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." && id.find('/') == std::string::npos &&
         id.find('\\') == std::string::npos;
}

constexpr std::array<const char*, 10> kFunctionWords{"a", "the", "with", "and", "of", "in", "on", "near", "while", "then"};

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& record_indices) const {
  Dataset out;
  std::unordered_map<std::size_t, std::size_t> remap;
  for (std::size_t r : record_indices) {
    const std::size_t v = record_video.at(r);
    auto [it, fresh] = remap.try_emplace(v, out.video_ids.size());
    if (fresh) {
      out.video_ids.push_back(video_ids[v]);
      out.raw_frames.push_back(raw_frames[v]);
    }
    out.records.push_back(records[r]);
    out.record_video.push_back(it->second);
  }
  return out;
}

Dataset load_dataset(const fs::path& manifest, const fs::path& features_dir) {
  std::ifstream is(manifest);
  if (!is) throw FormatError("manifest " + manifest.string() + ": cannot open");
  Dataset data;
  std::unordered_map<std::string, std::size_t> video_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest " + manifest.string() + " line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("query") || !obj.contains("video_id") || !obj["query"].is_string() ||
        !obj["video_id"].is_string()) {
      throw FormatError(where + ": expected an object with string fields \"query\" and \"video_id\"");
    }
    DatasetRecord rec{obj["query"].get<std::string>(), obj["video_id"].get<std::string>()};
    if (tokenize(rec.query).empty()) throw FormatError(where + ": query is empty after tokenization");
    if (!safe_id(rec.video_id)) throw FormatError(where + ": invalid video_id '" + rec.video_id + "'");
    auto [it, fresh] = video_index.try_emplace(rec.video_id, data.video_ids.size());
    if (fresh) data.video_ids.push_back(rec.video_id);
    data.record_video.push_back(it->second);
    data.records.push_back(std::move(rec));
  }
  if (data.records.empty()) throw FormatError("manifest " + manifest.string() + ": no records");

  std::vector<std::string> missing;
  for (const auto& id : data.video_ids) {
    if (!fs::is_regular_file(features_dir / (id + ".tcef"))) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw FormatError("missing feature files for " + std::to_string(missing.size()) + " video(s) in " +
                      features_dir.string() + ": " + list);
  }
  data.raw_frames.reserve(data.video_ids.size());
  for (const auto& id : data.video_ids) {
    data.raw_frames.push_back(read_tcef(features_dir / (id + ".tcef")));
    if (data.raw_frames.back().cols() != data.raw_frames.front().cols()) {
      throw FormatError("frame file " + (features_dir / (id + ".tcef")).string() + ": feature width " +
                        std::to_string(data.raw_frames.back().cols()) + " differs from " +
                        std::to_string(data.raw_frames.front().cols()));
    }
  }
  return data;
}

Dataset load_dataset_dir(const fs::path& dir) { return load_dataset(dir / "manifest.jsonl", dir / "features"); }

Vocabulary build_vocabulary(const Dataset& data) {
  Vocabulary v;
  for (const auto& r : data.records)
    for (const auto& t : tokenize(r.query)) v.add(t);
  return v;
}

Vocabulary dataset_vocabulary(const fs::path& dir, const Dataset& data) {
  if (fs::is_regular_file(dir / "vocab.txt")) return Vocabulary::load(dir / "vocab.txt");
  return build_vocabulary(data);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

DatasetSplit split_dataset(const Dataset& data, double val_fraction) {
  const auto cut = static_cast<std::uint64_t>(val_fraction * 10000.0);
  std::vector<bool> held(data.video_ids.size());
  std::size_t held_videos = 0;
  for (std::size_t v = 0; v < held.size(); ++v) {
    held[v] = fnv1a(data.video_ids[v]) % 10000 < cut;
    held_videos += held[v];
  }
  std::vector<std::size_t> train, val;
  for (std::size_t r = 0; r < data.records.size(); ++r) (held[data.record_video[r]] ? val : train).push_back(r);
  if (train.empty()) throw ConfigError("split: every video was held out; lower val_fraction");
  DatasetSplit split;
  split.train = data.subset(train);
  if (held_videos < 2) {
    // too few held-out videos to rank; keep them out of training anyway
    split.val = split.train;
    split.val_is_train = true;
  } else {
    split.val = data.subset(val);
  }
  return split;
}

void generate_synthetic(const fs::path& dir, const SyntheticOptions& opt) {
  if (opt.pairs < 2) throw ConfigError("synth: at least 2 pairs required");
  if (opt.frame_dim == 0 || opt.min_frames < 3 || opt.max_frames < opt.min_frames) {
    throw ConfigError("synth: frame_dim must be positive and 3 <= min_frames <= max_frames");
  }
  const std::size_t n_function = std::min<std::size_t>(kFunctionWords.size(), opt.vocab_size / 5);
  const std::size_t n_content = opt.vocab_size - n_function;
  const double triples = n_content < 3 ? 0.0 : n_content * (n_content - 1.0) * (n_content - 2.0) / 6.0;
  if (triples < static_cast<double>(opt.pairs)) {
    throw ConfigError("synth: vocab_size " + std::to_string(opt.vocab_size) + " cannot give " +
                      std::to_string(opt.pairs) + " distinct concepts");
  }

  Rng rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vocabulary vocab;
  std::vector<std::string> function_words(kFunctionWords.begin(), kFunctionWords.begin() + n_function);
  std::vector<std::string> content_words;
  for (const auto& w : function_words) vocab.add(w);
  for (std::size_t i = 0; i < n_content; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "word%03zu", i);
    content_words.emplace_back(buf);
    vocab.add(buf);
  }
  std::vector<Tensor> latent;
  for (std::size_t i = 0; i < n_content; ++i) {
    Tensor z = Tensor::matrix(1, opt.frame_dim);
    for (double& v : z.data()) v = normal(rng);
    latent.push_back(std::move(z));
  }

  fs::create_directories(dir / "features");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw FormatError("synth: cannot write " + (dir / "manifest.jsonl").string());
  std::set<std::array<std::size_t, 3>> used;
  for (std::size_t p = 0; p < opt.pairs; ++p) {
    std::array<std::size_t, 3> words{};
    for (;;) {
      for (auto& w : words) w = rng() % n_content;
      if (words[0] == words[1] || words[0] == words[2] || words[1] == words[2]) continue;
      auto key = words;
      std::sort(key.begin(), key.end());
      if (used.insert(key).second) break;
    }
    std::string query;
    for (std::size_t k = 0; k < 3; ++k) {
      if (n_function > 0 && rng() % 3 != 0) query += function_words[rng() % n_function] + " ";
      query += content_words[words[k]];
      if (k < 2) query += " ";
    }
    char id[32];
    std::snprintf(id, sizeof id, "vid%04zu", p);

    const std::size_t len = opt.min_frames + rng() % (opt.max_frames - opt.min_frames + 1);
    Tensor frames = Tensor::matrix(len, opt.frame_dim);
    for (std::size_t t = 0; t < len; ++t) {
      const Tensor& z = latent[words[std::min<std::size_t>(2, 3 * t / len)]];
      for (std::size_t j = 0; j < opt.frame_dim; ++j) frames(t, j) = z[j] + opt.frame_noise * normal(rng);
    }
    write_tcef(dir / "features" / (std::string(id) + ".tcef"), frames);
    manifest << json{{"query", query}, {"video_id", id}}.dump() << '\n';
  }
  vocab.save(dir / "vocab.txt");
}

}  // namespace tce
