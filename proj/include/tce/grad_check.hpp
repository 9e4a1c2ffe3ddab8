// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "tce/graph.hpp"
#include "tce/param_store.hpp"

namespace tce {

struct GradCheckOptions {
  double step = 1e-5;
  std::uint64_t seed = 0;
  std::size_t samples_per_param = 32;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  std::size_t checked = 0;
  // Coordinates whose probes crossed a ReLU/hinge/argmax boundary.
  std::size_t skipped = 0;
  // Both analytic and numeric magnitudes under the finite-difference noise
  // bound (1e3 * eps * max(1, |L|) / h); excluded from max_rel_error.
  std::size_t below_resolution = 0;
  // The base point sits exactly on a kink, so no comparison was made.
  bool skipped_at_kink = false;

  bool passed(double tolerance) const { return skipped_at_kink || max_rel_error < tolerance; }
  std::string summary() const;
};

/// Compares backward() against central finite differences.
///
/// `build` must construct a scalar loss on the graph it is given, reading
/// parameters from `store`. For every trainable parameter, up to
/// `samples_per_param` coordinates are probed (all of them if fewer). The
/// relative error is |a - n| / max(|a|, |n|, 1e-8). Coordinates whose two
/// gradients are both below the resolution bound are counted, not compared.
GradCheckReport grad_check(const std::function<Var(Graph&)>& build, ParamStore& store,
                           const GradCheckOptions& options = {});

}  // namespace tce
