// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

#include "pointbox/nn/tensor.hpp"

namespace pointbox::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Every op appends one node holding its output
/// and a closure that pushes the output gradient to its inputs. Parameter
/// nodes alias the parameter storage, so gradients accumulate directly into
/// Parameter::grad across backward calls.
///
/// With gradients disabled no closures are stored and the tape is a plain
/// forward evaluator.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var parameter(Parameter<T>& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Appends an op output. The closure is kept only if some input needs a
  /// gradient.
  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (Var v : inputs) needs = needs || (v.valid() && nodes_[v.id].requires_grad);
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    return {static_cast<int>(nodes_.size()) - 1};
  }
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }
  const std::vector<int>& shape(Var v) const { return value(v).shape; }

  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of v, zero-initialised on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.param) {
      if (n.param->grad.shape != n.param->value.shape) n.param->grad = Tensor<T>(n.param->value.shape);
      return n.param->grad;
    }
    if (n.grad.shape != n.value.shape || n.grad.numel() != n.value.numel()) {
      n.grad = Tensor<T>(n.value.shape);
    }
    return n.grad;
  }

  /// Back-propagates from a scalar root with d(root) = seed.
  void backward(Var root, T seed = T(1)) {
    if (!requires_grad(root)) return;
    if (value(root).numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
    grad(root).data[0] += seed;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.param) continue;
      if (n.grad.numel() == 0) continue;
      n.backward(*this, n.grad);
      // Free intermediate gradients as soon as they are consumed.
      n.grad = Tensor<T>();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace pointbox::nn
