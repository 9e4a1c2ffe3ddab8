// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tce/tensor.hpp"

namespace tce {

struct RetrievalResult {
  std::vector<std::size_t> ranks;  // 1-based, one per query
  double r1 = 0.0;                 // percent
  double r5 = 0.0;
  double r10 = 0.0;
  std::size_t medr = 0;

  std::string summary() const;
};

/// 1-based position of `target` when scores are sorted descending with ties
/// broken towards the lower index.
std::size_t rank_of(std::span<const double> scores, std::size_t target);

/// R@K as percentages; MedR is the lower middle rank for an even count.
RetrievalResult retrieval_metrics(std::vector<std::size_t> ranks);

/// scores: queries x videos; targets[i] is the ground-truth column of row i.
RetrievalResult rank_scores(const Tensor& scores, const std::vector<std::size_t>& targets);

}  // namespace tce
