// Copyright 2026  The hvector Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef HVECTOR_GRAPH_HPP_
#define HVECTOR_GRAPH_HPP_

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hvector/tensor.hpp"

namespace hvector {

template <typename Scalar>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  Tensor<Scalar> grad() const { return graph_->grad(id_); }
  const Shape& shape() const { return value().shape(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a topological order because a
/// node can only reference nodes that already exist. backward() walks the tape
/// once in reverse and may be called once per reset().
template <typename Scalar_>
class Graph {
 public:
  using Scalar = Scalar_;
  using TensorT = Tensor<Scalar>;
  using Matrix = typename TensorT::Matrix;
  // Receives the upstream gradient of the node and pushes contributions into
  // the node's parents through accumulate().
  using BackwardFn = std::function<void(Graph&, const TensorT&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(TensorT value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), TensorT{}, requires_grad, {}, {}, "leaf"});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false); }

  Var<Scalar> record(TensorT value, std::vector<std::size_t> parents, BackwardFn fn,
                     const char* op) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
    if (!needs) fn = nullptr;
    nodes_.push_back(Node{std::move(value), TensorT{}, needs, std::move(parents), std::move(fn), op});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() loss w.r.t. node `id`; zeros if the node
  /// was not reached.
  TensorT grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.grad.empty() ? TensorT::zeros(n.value.shape()) : n.grad;
  }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = TensorT::zeros(n.value.shape());
    n.grad.mat() += g;
  }

  void backward(const Var<Scalar>& loss) {
    if (&loss.graph() != this) throw std::logic_error("backward: loss belongs to another graph");
    if (backward_done_) throw std::logic_error("backward already ran on this graph; call reset()");
    Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1)
      throw DimensionError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
    backward_done_ = true;
    if (!root.requires_grad) return;
    root.grad = TensorT::constant(root.value.shape(), Scalar(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) {
        // copy: the callback may append to parents' grads but never to itself
        const TensorT upstream = n.grad;
        n.backward(*this, upstream);
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    const char* op;
  };

  // deque: references returned by value() stay valid as nodes are appended
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace hvector

#endif  // HVECTOR_GRAPH_HPP_
