// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tce/grad_check.hpp"

namespace tce {

struct GradientSuiteEntry {
  std::string module;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

/// Names of the checked components, in run order.
const std::vector<std::string>& gradient_suite_modules();

/// Finite-difference checks of every differentiable component on small
/// random instances, once per seed.
std::vector<GradientSuiteEntry> run_gradient_suite(const std::vector<std::uint64_t>& seeds);

}  // namespace tce
