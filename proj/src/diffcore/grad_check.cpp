// SPDX-License-Identifier: Apache-2.0
#include "tce/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "tce/error.hpp"

namespace tce {

namespace {

// A central difference cannot resolve gradients much below eps * |L| / h;
// both sides under this many multiples of that bound count as unresolved.
constexpr double kResolutionFactor = 1e3;

struct Probe {
  double loss;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Var(Graph&)>& build, ParamStore& store) {
  Graph g(&store);
  g.set_track_kinks(true);
  Var loss = build(g);
  const double v = loss.value().scalar_value();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss while probing");
  return {v, g.decision_signature()};
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  if (skipped_at_kink) {
    os << "skipped at kink";
    return os.str();
  }
  os << "max rel error " << max_rel_error << " over " << checked << " coords";
  if (skipped > 0) os << " (" << skipped << " skipped near kinks)";
  if (below_resolution > 0) os << " (" << below_resolution << " below finite-difference resolution)";
  if (!worst_coordinate.empty()) os << ", worst " << worst_coordinate;
  return os.str();
}

GradCheckReport grad_check(const std::function<Var(Graph&)>& build, ParamStore& store,
                           const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-4)) {
    throw ConfigError("grad_check: step must lie in [1e-6, 1e-4]");
  }
  GradCheckReport report;

  Gradients analytic;
  std::uint64_t base_signature = 0;
  {
    Graph g(&store);
    g.set_track_kinks(true);
    Var loss = build(g);
    if (!std::isfinite(loss.value().scalar_value())) throw NumericalError("grad_check: non-finite loss");
    if (g.min_kink_distance() == 0.0) {
      report.skipped_at_kink = true;
      return report;
    }
    base_signature = g.decision_signature();
    analytic = g.backward(loss);
  }

  Rng rng(options.seed);
  const double h = options.step;
  for (auto& [name, param] : store.entries()) {
    if (!param.trainable) continue;
    const Tensor& grad = analytic.at(name);
    std::vector<std::size_t> coords(param.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = param.value[i];
      param.value[i] = saved + h;
      Probe plus = evaluate(build, store);
      param.value[i] = saved - h;
      Probe minus = evaluate(build, store);
      param.value[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * h);
      const double a = grad[i];
      const double resolution = kResolutionFactor * std::numeric_limits<double>::epsilon() *
                                std::max({1.0, std::abs(plus.loss), std::abs(minus.loss)}) / h;
      if (std::abs(a) < resolution && std::abs(numeric) < resolution) {
        ++report.below_resolution;
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        std::ostringstream os;
        os << name << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        report.worst_coordinate = os.str();
      }
    }
  }
  if (report.checked == 0 && report.below_resolution == 0 && report.skipped > 0) report.skipped_at_kink = true;
  return report;
}

}  // namespace tce
