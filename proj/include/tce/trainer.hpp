// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "tce/dataset.hpp"
#include "tce/metrics.hpp"
#include "tce/model.hpp"

namespace tce {

struct TrainOptions {
  std::ostream* log = nullptr;       // "epoch,step,loss" per batch
  std::ostream* progress = nullptr;  // one human-readable line per epoch
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  RetrievalResult val;
};

struct TrainResult {
  std::vector<double> losses;  // per step
  std::vector<EpochSummary> epochs;
  // 0 when no epoch beat the initial parameters.
  std::size_t best_epoch = 0;
  RetrievalResult best;
  bool stopped_early = false;
};

/// Mini-batch training with train-mode selection and batch statistics. The
/// model ends up holding the parameters of the best validation R@1 (ties go
/// to the earlier epoch; epoch 0 is the initialization).
TrainResult train(TceModel& model, const Dataset& train_set, const Dataset& val_set, const TrainOptions& options = {});

/// Cosine scores, queries (records) x videos, in eval mode.
Tensor score_matrix(TceModel& model, const Dataset& data);
RetrievalResult evaluate(TceModel& model, const Dataset& data);

/// Bracketed tree with per-constituent attention weights, e.g.
/// "((a dog):0.400 runs):0.600". Weights are rounded to three decimals by
/// largest remainder so the printed values sum to exactly 1.
std::string export_tree(TceModel& model, std::string_view query);

/// Rounds to `decimals` places keeping the sum of the rounded values equal to
/// the rounded sum.
std::vector<double> round_preserving_sum(const std::vector<double>& values, int decimals);

}  // namespace tce
