// SPDX-License-Identifier: Apache-2.0
#include "tce/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "tce/adam.hpp"
#include "tce/error.hpp"
#include "tce/joint_space.hpp"
#include "tce/ops.hpp"

namespace tce {

namespace {

std::vector<FrameFeatures> fit_all(const TceModel& model, const Dataset& data) {
  std::vector<FrameFeatures> out;
  out.reserve(data.video_ids.size());
  for (std::size_t v = 0; v < data.video_ids.size(); ++v) out.push_back(model.fit(data.raw_frames[v], data.video_ids[v]));
  return out;
}

using Snapshot = std::vector<Tensor>;

Snapshot snapshot(const ParamStore& store) {
  Snapshot s;
  for (const auto& [name, p] : store.entries()) s.push_back(p.value);
  return s;
}

void restore(ParamStore& store, const Snapshot& s) {
  std::size_t i = 0;
  for (auto& [name, p] : store.entries()) p.value = s[i++];
}

// Names and norms of gradients that are not finite, for the abort message.
std::string bad_gradients(const Gradients& grads) {
  std::ostringstream os;
  for (const auto& [name, grad] : grads) {
    if (grad.all_finite()) continue;
    double norm = 0.0;
    for (double v : grad.data()) norm += v * v;
    os << ' ' << name << " |g|=" << std::sqrt(norm);
  }
  return os.str();
}

}  // namespace

Tensor score_matrix(TceModel& model, const Dataset& data) {
  std::vector<std::string> queries;
  queries.reserve(data.records.size());
  for (const auto& r : data.records) queries.push_back(r.query);
  const Tensor q = model.query_embeddings(queries);
  const Tensor v = model.video_embeddings(fit_all(model, data));
  Graph g;
  return similarity_matrix(g.constant(q), g.constant(v)).value();
}

RetrievalResult evaluate(TceModel& model, const Dataset& data) {
  if (data.video_ids.size() < 2) throw ShapeError("evaluate: at least two videos required");
  return rank_scores(score_matrix(model, data), data.record_video);
}

TrainResult train(TceModel& model, const Dataset& train_set, const Dataset& val_set, const TrainOptions& opt) {
  const RunConfig& cfg = model.config();
  if (train_set.records.size() < 2) throw ShapeError("train: at least two training pairs required");
  const std::vector<FrameFeatures> videos = fit_all(model, train_set);
  ParamStore& store = model.params();
  const AdamOptions adam{cfg.lr};

  TrainResult result;
  result.best = evaluate(model, val_set);
  Snapshot best = snapshot(store);

  std::vector<std::size_t> order(train_set.records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed ^ 0x5eedULL);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      if (end - start < 2) break;
      ++step;
      std::vector<std::vector<std::size_t>> tokens;
      std::vector<const FrameFeatures*> clips;
      std::vector<std::size_t> groups;
      std::vector<Rng> rngs;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t r = order[k];
        tokens.push_back(model.vocab().encode(train_set.records[r].query));
        clips.push_back(&videos[train_set.record_video[r]]);
        groups.push_back(train_set.record_video[r]);
        std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed & 0xffffffffU), static_cast<std::uint64_t>(cfg.seed >> 32), static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(k - start)};
        rngs.emplace_back(seq);
      }
      Gradients grads;
      double loss = 0.0;
      try {
        Graph g(&store);
        Var s = similarity_matrix(model.embed_queries(g, tokens, true, &rngs), model.embed_videos(g, clips, true));
        Var l = ranking_loss(s, cfg.margin, cfg.n_hard, cfg.exclude_duplicate_positives ? &groups : nullptr);
        loss = l.value().scalar_value();
        grads = g.backward(l);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + " (step " +
                             std::to_string(step) + "): " + e.what());
      }
      if (!std::isfinite(loss) || !bad_gradients(grads).empty()) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) +
                             ": non-finite loss or gradient;" + bad_gradients(grads));
      }
      adam_step(store, grads, adam);
      result.losses.push_back(loss);
      loss_sum += loss;
      ++batches;
      if (opt.log) *opt.log << epoch << ',' << step << ',' << std::setprecision(17) << loss << '\n';
    }

    EpochSummary summary{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, evaluate(model, val_set)};
    if (summary.val.r1 > result.best.r1) {
      result.best = summary.val;
      result.best_epoch = epoch;
      best = snapshot(store);
    }
    if (opt.progress) {
      *opt.progress << "epoch " << epoch << " loss " << std::setprecision(6) << summary.mean_loss << " val "
                    << summary.val.summary() << (result.best_epoch == epoch ? " *" : "") << '\n';
    }
    result.epochs.push_back(std::move(summary));
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  restore(store, best);
  return result;
}

std::vector<double> round_preserving_sum(const std::vector<double>& values, int decimals) {
  const double scale = std::pow(10.0, decimals);
  std::vector<double> floors(values.size());
  std::vector<std::size_t> order(values.size());
  double total = 0.0;
  long long floor_sum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    floors[i] = std::floor(values[i] * scale);
    floor_sum += static_cast<long long>(floors[i]);
    total += values[i];
  }
  auto left = static_cast<long long>(std::llround(total * scale)) - floor_sum;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] * scale - floors[a] > values[b] * scale - floors[b];
  });
  for (std::size_t i = 0; i < order.size() && left > 0; ++i, --left) floors[order[i]] += 1.0;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = floors[i] / scale;
  return out;
}

std::string export_tree(TceModel& model, std::string_view query) {
  const std::vector<std::string> words = tokenize(query);
  if (words.empty()) throw ShapeError("empty query");
  std::vector<std::size_t> tokens;
  for (const auto& w : words) tokens.push_back(model.vocab().index_of(w));

  Graph g(&model.params());
  const QueryEncoding enc = encode_query(g, tokens, model.query_config(), nullptr);
  const SemanticTree& tree = enc.tree;
  if (tree.constituents.empty()) return words.front();

  const std::vector<double> weights = round_preserving_sum(tree.node_weights, 3);
  const std::size_t n = tree.leaves.size();
  auto weight_text = [&](bool leaf, std::size_t index) -> std::string {
    std::size_t slot;
    if (tree.weights_include_leaves) {
      slot = leaf ? index : n + index;
    } else {
      if (leaf) return "";
      slot = index;
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, ":%.3f", weights[slot]);
    return buf;
  };
  std::vector<std::string> text(tree.constituents.size());
  auto node = [&](const NodeRef& ref) { return ref.leaf ? words[ref.index] + weight_text(true, ref.index) : text[ref.index]; };
  for (std::size_t c = 0; c < tree.constituents.size(); ++c) {
    const Constituent& k = tree.constituents[c];
    text[c] = "(" + node(k.left) + " " + node(k.right) + ")" + weight_text(false, c);
  }
  return text.back();
}

}  // namespace tce
