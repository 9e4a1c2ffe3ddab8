// SPDX-License-Identifier: Apache-2.0
#include "tce/adam.hpp"

#include <cmath>

#include "tce/error.hpp"

namespace tce {

void adam_step(ParamStore& store, const Gradients& grads, const AdamOptions& options) {
  for (const auto& [name, grad] : grads) {
    Parameter& p = store.at(name);
    if (!p.trainable) continue;
    if (!grad.same_shape(p.value)) {
      throw ShapeError("adam_step: gradient " + grad.shape_string() + " does not match parameter '" + name +
                       "' " + p.value.shape_string());
    }
    p.step += 1;
    const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      double& m = p.first_moment[i];
      double& v = p.second_moment[i];
      m = options.beta1 * m + (1.0 - options.beta1) * g;
      v = options.beta2 * v + (1.0 - options.beta2) * g * g;
      p.value[i] -= options.lr * (m / c1) / (std::sqrt(v / c2) + options.eps);
    }
  }
}

}  // namespace tce
