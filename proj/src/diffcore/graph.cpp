// SPDX-License-Identifier: Apache-2.0
#include "tce/graph.hpp"

#include <cmath>

#include "tce/error.hpp"

namespace tce {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite value");
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(std::string_view name) {
  if (store_ == nullptr) throw ConfigError("graph: no parameter store bound");
  std::string key(name);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
  Parameter& p = store_->at(name);
  Node n;
  n.op = "param";
  n.external = &p.value;
  n.requires_grad = p.trainable;
  n.param_name = key;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(std::move(key), nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                  Backward backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                  Backward backward) {
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": non-finite output of shape " + value.shape_string());
  }
  Node n;
  n.op = std::string(op);
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.graph != this) throw ShapeError(std::string(op) + ": input from another graph");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.owned;
}

Tensor* Graph::grad_slot(Var v) {
  if (!nodes_[v.id].requires_grad) return nullptr;
  Tensor& g = grads_[v.id];
  if (g.empty()) g = Tensor(value(v).shape(), 0.0);
  return &g;
}

Gradients Graph::backward(Var loss) {
  if (loss.graph != this) throw ShapeError("backward: loss from another graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + lv.shape_string());

  grads_.assign(nodes_.size(), Tensor{});
  if (nodes_[loss.id].requires_grad) {
    grads_[loss.id] = Tensor(lv.shape(), 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (grads_[id].empty() || !n.backward) continue;
      n.backward(*this, value(Var{this, id}), grads_[id]);
    }
  }

  Gradients out;
  for (const auto& [name, id] : param_nodes_) {
    if (!nodes_[id].requires_grad) continue;
    if (!grads_[id].empty()) {
      out.emplace(name, std::move(grads_[id]));
    }
  }
  if (store_ != nullptr) {
    for (const auto& [name, p] : store_->entries()) {
      if (p.trainable && !out.contains(name)) out.emplace(name, Tensor(p.value.shape(), 0.0));
    }
  }
  grads_.clear();
  return out;
}

void Graph::note_kink(double distance, std::uint64_t decision) {
  if (!track_kinks_) return;
  min_kink_ = std::min(min_kink_, std::abs(distance));
  // FNV-1a over the decision stream
  for (int byte = 0; byte < 8; ++byte) {
    signature_ ^= (decision >> (8 * byte)) & 0xffU;
    signature_ *= 1099511628211ULL;
  }
}

}  // namespace tce
