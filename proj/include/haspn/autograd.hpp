#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "haspn/tensor.hpp"

namespace haspn::nn {

// One value in a dynamically recorded computation graph. Nodes only keep
// their inputs and a backward closure when some input requires a gradient,
// so graphs built from constants release intermediates as soon as the
// caller drops them.
template <class T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  Tensor4<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor4<T>(value.shape());
    return grad;
  }

  // grad[i] += contribution(i); the first contribution is adopted directly.
  template <class F>
  void accumulate(F&& contribution) {
    const std::size_t n = value.size();
    if (grad.empty()) {
      grad = Tensor4<T>::uninitialized(value.shape());
      for (std::size_t i = 0; i < n; ++i) grad[i] = contribution(i);
    } else {
      for (std::size_t i = 0; i < n; ++i) grad[i] += contribution(i);
    }
  }
};

inline std::uint64_t next_node_order() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor4<T> value) { return make(std::move(value), false); }
  static Var leaf(Tensor4<T> value) { return make(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor4<T>& value() const { return node_->value; }
  const Shape4& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  // Empty when no gradient reached this node.
  const Tensor4<T>& grad() const { return node_->grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  void zero_grad() { node_->grad = Tensor4<T>(); }

 private:
  static Var make(Tensor4<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->order = next_node_order();
    return Var(std::move(n));
  }

  std::shared_ptr<Node<T>> node_;
};

// Records an op result. `backward` is only retained when at least one input
// needs a gradient.
template <class T>
Var<T> record(Tensor4<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->order = next_node_order();
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

// Reverse-mode sweep from `root`, seeded with ones. Gradients accumulate into
// every reachable node that requires one.
template <class T>
void backward(const Var<T>& root) {
  if (!root.defined() || !root.requires_grad()) return;
  std::vector<Node<T>*> nodes;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      if (in && in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });
  root.node()->grad_buffer().fill(T(1));
  for (Node<T>* n : nodes) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// Optional log of data-dependent branch choices: ReLU signs, max-pool
// winners, |x| signs. Finite-difference checks compare two logs to tell
// whether a perturbation crossed a point where the graph is not smooth.
class BranchLog {
 public:
  explicit BranchLog(std::vector<std::int32_t>& sink) : previous_(slot()) { slot() = &sink; }
  ~BranchLog() { slot() = previous_; }
  BranchLog(const BranchLog&) = delete;
  BranchLog& operator=(const BranchLog&) = delete;

  static std::vector<std::int32_t>* active() { return slot(); }

 private:
  static std::vector<std::int32_t>*& slot() {
    thread_local std::vector<std::int32_t>* current = nullptr;
    return current;
  }
  std::vector<std::int32_t>* previous_;
};

}  // namespace haspn::nn
