// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tce/param_store.hpp"
#include "tce/tensor.hpp"

namespace tce {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  bool valid() const { return graph != nullptr; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

using Gradients = std::map<std::string, Tensor, std::less<>>;

/// Tape of forward values with registered backward rules.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// backward walks the tape once from the loss towards the front.
class Graph {
 public:
  // Receives the node's forward value and the accumulated gradient of the loss
  // with respect to it; pushes contributions into the inputs via grad_slot().
  using Backward = std::function<void(Graph&, const Tensor& value, const Tensor& grad)>;

  explicit Graph(ParamStore* store = nullptr) : store_(store) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // One leaf per parameter name; repeated calls return the same node.
  Var param(std::string_view name);
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             Backward backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient buffer of an input, zero-initialized on first use; nullptr when
  // the input does not need a gradient.
  Tensor* grad_slot(Var v);

  /// Reverse sweep from a 1x1 loss. Every trainable parameter in the store is
  /// present in the result; unreachable ones get zeros.
  Gradients backward(Var loss);

  // Kink bookkeeping for piecewise-smooth ops (ReLU, hinge, max, argmax).
  // Only active when tracking is enabled, which the gradient checker does.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_kink(double distance, std::uint64_t decision);
  double min_kink_distance() const { return min_kink_; }
  std::uint64_t decision_signature() const { return signature_; }

  ParamStore* store() const { return store_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(Var v) const { return nodes_[v.id].op; }

 private:
  struct Node {
    std::string op;
    Tensor owned;
    const Tensor* external = nullptr;  // parameter values stay in the store
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  ParamStore* store_ = nullptr;
  bool track_kinks_ = false;
  double min_kink_ = std::numeric_limits<double>::infinity();
  std::uint64_t signature_ = 1469598103934665603ULL;
};

}  // namespace tce
