// SPDX-License-Identifier: Apache-2.0
#include "tce/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "tce/error.hpp"

namespace tce {

std::string RetrievalResult::summary() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "R@1=%.1f R@5=%.1f R@10=%.1f MedR=%zu", r1, r5, r10, medr);
  return buf;
}

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw ShapeError("rank_of: target index out of range");
  const double t = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > t || (scores[j] == t && j < target)) ++rank;
  }
  return rank;
}

RetrievalResult retrieval_metrics(std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw ShapeError("retrieval_metrics: no queries");
  RetrievalResult out;
  const double n = static_cast<double>(ranks.size());
  auto pct = [&](std::size_t k) {
    return 100.0 * static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; })) / n;
  };
  out.r1 = pct(1);
  out.r5 = pct(5);
  out.r10 = pct(10);
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  out.medr = sorted[(sorted.size() - 1) / 2];
  out.ranks = std::move(ranks);
  return out;
}

RetrievalResult rank_scores(const Tensor& scores, const std::vector<std::size_t>& targets) {
  if (scores.rows() != targets.size()) throw ShapeError("rank_scores: one target per query row required");
  if (scores.cols() < 2) throw ShapeError("rank_scores: at least two videos required");
  std::vector<std::size_t> ranks;
  ranks.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) ranks.push_back(rank_of(scores.row_span(i), targets[i]));
  return retrieval_metrics(std::move(ranks));
}

}  // namespace tce
