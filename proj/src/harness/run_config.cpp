// SPDX-License-Identifier: Apache-2.0
#include "tce/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "tce/error.hpp"

namespace tce {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config: " + std::string(key) + "=" + std::string(value) + " (expected " +
                    std::string(expected) + ")");
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad(key, v, "a finite number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "true or false");
}

template <class E>
E to_enum(std::string_view key, std::string_view v, std::initializer_list<std::pair<std::string_view, E>> names) {
  std::string expected;
  for (const auto& [n, e] : names) {
    if (n == v) return e;
    expected += expected.empty() ? std::string(n) : "|" + std::string(n);
  }
  bad(key, v, expected);
}

template <class E>
std::string_view enum_name(E e, std::initializer_list<std::pair<std::string_view, E>> names) {
  for (const auto& [n, x] : names)
    if (x == e) return n;
  return "?";
}

const std::initializer_list<std::pair<std::string_view, LeafTransform>> kLeaf{{"lstm", LeafTransform::lstm},
                                                                             {"affine", LeafTransform::affine}};
const std::initializer_list<std::pair<std::string_view, ScoreMode>> kScore{{"memory_ctx", ScoreMode::memory_ctx},
                                                                          {"global_query", ScoreMode::global_query}};
const std::initializer_list<std::pair<std::string_view, QueryPool>> kQueryPool{
    {"attn", QueryPool::attn}, {"avg", QueryPool::avg}, {"last", QueryPool::last}};
const std::initializer_list<std::pair<std::string_view, VideoRnn>> kRnn{{"gru", VideoRnn::gru},
                                                                       {"affine", VideoRnn::affine}};
const std::initializer_list<std::pair<std::string_view, VideoPool>> kVideoPool{
    {"attn", VideoPool::attn}, {"avg", VideoPool::avg}, {"max", VideoPool::max}, {"last", VideoPool::last}};

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

QueryEncoderConfig RunConfig::query(std::size_t vocab_size) const {
  QueryEncoderConfig q;
  q.vocab_size = vocab_size;
  q.d_w = d_w;
  q.d_t = d_t;
  q.d_ta = d_ta;
  q.leaf = leaf;
  q.score = score;
  q.pool = query_pool;
  q.attend_leaves = attend_leaves;
  q.temperature = temperature;
  return q;
}

VideoEncoderConfig RunConfig::video() const {
  VideoEncoderConfig v;
  v.frame_dim = frame_dim;
  v.d_v = d_v;
  v.heads = heads;
  v.head_dim = head_dim;
  v.d_va = d_va;
  v.rnn = video_rnn;
  v.use_mha = use_mha;
  v.pool = video_pool;
  return v;
}

JointConfig RunConfig::joint() const {
  JointConfig j;
  j.d_star = d_star;
  j.use_projections = use_projections;
  j.normalize = normalize;
  j.margin = margin;
  j.n_hard = n_hard;
  j.exclude_duplicate_positives = exclude_duplicate_positives;
  return j;
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("config: ") + key + " must be positive");
  };
  positive(d_w, "d_w");
  positive(d_t, "d_t");
  positive(d_ta, "d_ta");
  positive(d_v, "d_v");
  positive(d_va, "d_va");
  positive(heads, "heads");
  positive(head_dim, "head_dim");
  positive(frames, "frames");
  positive(d_star, "d_star");
  positive(n_hard, "n_hard");
  if (batch < 2) throw ConfigError("config: batch must be at least 2");
  if (!(temperature > 0.0)) throw ConfigError("config: temperature must be positive");
  if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("config: margin must lie in (0, 1)");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("config: val_fraction must lie in [0, 1)");
  if (!use_projections && (d_t != d_star || d_v != d_star)) {
    throw ConfigError("config: with use_projections=false, d_t and d_v must equal d_star");
  }
}

void RunConfig::set(std::string_view key, std::string_view v) {
  using Setter = std::function<void(RunConfig&, std::string_view)>;
  static const std::map<std::string, Setter, std::less<>> setters = {
      {"d_w", [](RunConfig& c, std::string_view s) { c.d_w = to_size("d_w", s); }},
      {"d_t", [](RunConfig& c, std::string_view s) { c.d_t = to_size("d_t", s); }},
      {"d_ta", [](RunConfig& c, std::string_view s) { c.d_ta = to_size("d_ta", s); }},
      {"temperature", [](RunConfig& c, std::string_view s) { c.temperature = to_double("temperature", s); }},
      {"leaf", [](RunConfig& c, std::string_view s) { c.leaf = to_enum("leaf", s, kLeaf); }},
      {"score", [](RunConfig& c, std::string_view s) { c.score = to_enum("score", s, kScore); }},
      {"query_pool", [](RunConfig& c, std::string_view s) { c.query_pool = to_enum("query_pool", s, kQueryPool); }},
      {"attend_leaves", [](RunConfig& c, std::string_view s) { c.attend_leaves = to_bool("attend_leaves", s); }},
      {"word_vectors", [](RunConfig& c, std::string_view s) { c.word_vectors = std::string(s); }},
      {"frame_dim", [](RunConfig& c, std::string_view s) { c.frame_dim = to_size("frame_dim", s); }},
      {"d_v", [](RunConfig& c, std::string_view s) { c.d_v = to_size("d_v", s); }},
      {"d_va", [](RunConfig& c, std::string_view s) { c.d_va = to_size("d_va", s); }},
      {"heads", [](RunConfig& c, std::string_view s) { c.heads = to_size("heads", s); }},
      {"head_dim", [](RunConfig& c, std::string_view s) { c.head_dim = to_size("head_dim", s); }},
      {"frames", [](RunConfig& c, std::string_view s) { c.frames = to_size("frames", s); }},
      {"video_rnn", [](RunConfig& c, std::string_view s) { c.video_rnn = to_enum("video_rnn", s, kRnn); }},
      {"use_mha", [](RunConfig& c, std::string_view s) { c.use_mha = to_bool("use_mha", s); }},
      {"video_pool", [](RunConfig& c, std::string_view s) { c.video_pool = to_enum("video_pool", s, kVideoPool); }},
      {"d_star", [](RunConfig& c, std::string_view s) { c.d_star = to_size("d_star", s); }},
      {"use_projections", [](RunConfig& c, std::string_view s) { c.use_projections = to_bool("use_projections", s); }},
      {"normalize", [](RunConfig& c, std::string_view s) { c.normalize = to_bool("normalize", s); }},
      {"margin", [](RunConfig& c, std::string_view s) { c.margin = to_double("margin", s); }},
      {"n_hard", [](RunConfig& c, std::string_view s) { c.n_hard = to_size("n_hard", s); }},
      {"exclude_duplicate_positives",
       [](RunConfig& c, std::string_view s) { c.exclude_duplicate_positives = to_bool("exclude_duplicate_positives", s); }},
      {"lr", [](RunConfig& c, std::string_view s) { c.lr = to_double("lr", s); }},
      {"batch", [](RunConfig& c, std::string_view s) { c.batch = to_size("batch", s); }},
      {"epochs", [](RunConfig& c, std::string_view s) { c.epochs = to_size("epochs", s); }},
      {"patience", [](RunConfig& c, std::string_view s) { c.patience = to_size("patience", s); }},
      {"val_fraction", [](RunConfig& c, std::string_view s) { c.val_fraction = to_double("val_fraction", s); }},
      {"seed", [](RunConfig& c, std::string_view s) { c.seed = to_u64("seed", s); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second(*this, v);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "d_w=" << d_w << "\nd_t=" << d_t << "\nd_ta=" << d_ta << "\ntemperature=" << fmt(temperature)
     << "\nleaf=" << enum_name(leaf, kLeaf) << "\nscore=" << enum_name(score, kScore)
     << "\nquery_pool=" << enum_name(query_pool, kQueryPool) << "\nattend_leaves=" << b(attend_leaves)
     << "\nword_vectors=" << word_vectors << "\nframe_dim=" << frame_dim << "\nd_v=" << d_v << "\nd_va=" << d_va
     << "\nheads=" << heads << "\nhead_dim=" << head_dim << "\nframes=" << frames
     << "\nvideo_rnn=" << enum_name(video_rnn, kRnn) << "\nuse_mha=" << b(use_mha)
     << "\nvideo_pool=" << enum_name(video_pool, kVideoPool) << "\nd_star=" << d_star
     << "\nuse_projections=" << b(use_projections) << "\nnormalize=" << b(normalize) << "\nmargin=" << fmt(margin)
     << "\nn_hard=" << n_hard << "\nexclude_duplicate_positives=" << b(exclude_duplicate_positives)
     << "\nlr=" << fmt(lr) << "\nbatch=" << batch << "\nepochs=" << epochs << "\npatience=" << patience
     << "\nval_fraction=" << fmt(val_fraction) << "\nseed=" << seed << "\n";
  return os.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("config: cannot write " + path.string());
  os << to_text();
}

}  // namespace tce
