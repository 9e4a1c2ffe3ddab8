// SPDX-License-Identifier: Apache-2.0
#include "tce/param_store.hpp"

#include "tce/error.hpp"

namespace tce {

Tensor& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (params_.contains(name)) throw ConfigError("param store: duplicate parameter '" + name + "'");
  Parameter p;
  p.first_moment = Tensor(init.shape(), 0.0);
  p.second_moment = Tensor(init.shape(), 0.0);
  p.value = std::move(init);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second.value;
}

Tensor& ParamStore::add_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                                double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return add(name, std::move(t));
}

Tensor& ParamStore::add_normal(const std::string& name, std::size_t rows, std::size_t cols,
                               double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return add(name, std::move(t));
}

bool ParamStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Parameter& ParamStore::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("param store: unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Parameter& ParamStore::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("param store: unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

}  // namespace tce
