// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tce/graph.hpp"
#include "tce/param_store.hpp"

namespace tce {

struct AdamOptions {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected ADAM update of every trainable parameter that has an
/// entry in `grads`. Each such parameter's step count is incremented.
void adam_step(ParamStore& store, const Gradients& grads, const AdamOptions& options);

}  // namespace tce
