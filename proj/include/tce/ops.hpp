// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tce/graph.hpp"

namespace tce {

// All ops take and return rank-2 values. Shape errors name the op and shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
// b may be 1 x n and is then broadcast over the rows of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
// k * a + c elementwise.
Var affine_scalar(Var a, double k, double c);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
// Row gather; also serves as the embedding lookup.
Var gather_rows(Var a, std::span<const std::size_t> rows);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var log(Var a);

// Row-wise softmax. `keep` (one flag per column) excludes masked columns,
// which come out exactly 0.
Var softmax_rows(Var a, const std::vector<bool>* keep = nullptr);
// q k^T / sqrt(d), d = cols of q.
Var scaled_dot_product(Var q, Var k);

// Normalizes each row, then applies the 1 x n gain and bias.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

struct BatchNormState {
  Tensor* running_mean;  // 1 x n
  Tensor* running_var;   // 1 x n
  double momentum = 0.1;
  double eps = 1e-5;
};
// Per-column normalization over the batch rows. Training mode uses batch
// statistics and updates the running ones; inference uses running ones only.
Var batch_norm(Var x, Var gain, Var bias, const BatchNormState& state, bool train);

Var sum_all(Var a);
Var mean_rows(Var a);
// Column-wise max over rows; ties go to the lowest row.
Var max_rows(Var a);
// Each row divided by its L2 norm; zero rows are an error.
Var l2_normalize_rows(Var a);

// Forward value `hard`, gradient passed to `soft` unchanged.
Var straight_through(Var soft, Tensor hard);

}  // namespace tce
