#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dbpn/tensor.hpp"

namespace dbpn {

namespace detail {
inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording on this thread for its lifetime: results are constants and
/// intermediates are freed as soon as they are consumed.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One recorded value in the autodiff graph. Nodes are created in program order, so the
/// sequence number is a topological order and backward replays it in reverse.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::uint64_t seq = detail::next_sequence();
  std::vector<std::shared_ptr<Node>> inputs;
  /// Reads this node's grad and accumulates into the grads of `inputs`. Empty on leaves.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Tensor<T>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }

  void accumulate_grad(std::span<const T> g) {
    auto dst = grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const& { return node_->value; }
  /// A temporary may hold the last reference to its node, so hand out a copy.
  Tensor<T> value() && { return node_->value; }
  /// Direct access for optimizers and initializers; never call while a graph that reads it is alive.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->has_grad; }
  const Tensor<T>& grad() const& { return node_->grad_buffer(); }
  Tensor<T> grad() && { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }

  void zero_grad() {
    if (node_->has_grad) node_->grad.fill(T(0));
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Wraps a freshly computed value into the graph. When no input requires a gradient, or a
/// NoGradGuard is active, the result is a plain constant and neither the inputs nor the
/// backward closure are retained.
template <typename T>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  auto out = std::make_shared<Node<T>>();
  out->value = std::move(value);
  const bool needs = grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
  if (needs) {
    out->requires_grad = true;
    out->inputs.reserve(inputs.size());
    for (auto& v : inputs) out->inputs.push_back(v.node());
    out->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(out));
}

/// Reverse-mode sweep from a (1,1,1,1) loss. Leaf grads accumulate; intermediate grads are
/// released once propagated.
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || !(loss.shape() == Shape{1, 1, 1, 1})) {
    throw ContractError("backward: loss must have shape (1,1,1,1)");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor that requires grad");
  }

  std::vector<Node<T>*> order;
  std::vector<Node<T>*> stack{loss.node().get()};
  std::vector<const Node<T>*> seen;
  auto visited = [&](const Node<T>* n) { return std::find(seen.begin(), seen.end(), n) != seen.end(); };
  // Graphs here are a few hundred nodes at most; a linear scan beats hashing.
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (visited(n)) continue;
    seen.push_back(n);
    if (n->is_leaf()) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && !visited(in.get())) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  loss.node()->grad_buffer()[0] += T(1);
  for (Node<T>* n : order) {
    if (!n->has_grad) continue;
    n->backward_fn(*n);
    if (n != loss.node().get()) {
      n->grad = Tensor<T>();
      n->has_grad = false;
    }
  }
}

}  // namespace dbpn
