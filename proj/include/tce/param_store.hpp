// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tce/tensor.hpp"

namespace tce {

using Rng = std::mt19937_64;

struct Parameter {
  Tensor value;
  // ADAM moments, same shape as value.
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step = 0;
  // Buffers (batch-norm running statistics) are saved but never optimized.
  bool trainable = true;
};

/// Named parameters and optimizer state. Iteration order is by name.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init, bool trainable = true);
  // Uniform(-bound, bound) initialization.
  Tensor& add_uniform(const std::string& name, std::size_t rows, std::size_t cols, double bound,
                      Rng& rng);
  Tensor& add_normal(const std::string& name, std::size_t rows, std::size_t cols, double stddev,
                     Rng& rng);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Tensor& value(std::string_view name) { return at(name).value; }
  const Tensor& value(std::string_view name) const { return at(name).value; }

  std::map<std::string, Parameter, std::less<>>& entries() { return params_; }
  const std::map<std::string, Parameter, std::less<>>& entries() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Parameter, std::less<>> params_;
};

}  // namespace tce
