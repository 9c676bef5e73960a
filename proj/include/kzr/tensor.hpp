#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Leaves are created by the
// user (parameters, inputs); every op in ops.hpp produces a new node that
// records its inputs and a closure that propagates gradients back to them.
// Nodes are numbered at creation, so sorting reachable nodes by creation
// order gives a valid topological order for the backward sweep.
//
// Backward releases the graph: after Tensor::backward() the closures of all
// interior nodes are dropped and a second backward() through the same graph
// throws std::logic_error. Leaf gradients accumulate across calls until
// zero_grad().

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace kzr {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline std::atomic<std::uint64_t> g_node_seq{0};
inline thread_local bool g_no_grad = false;

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::uint64_t seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value->size()) grad.assign(value->size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_no_grad) { detail::g_no_grad = true; }
  ~NoGradGuard() { detail::g_no_grad = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    check_extents(shape);
    node_->value = std::make_shared<std::vector<T>>(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    check_extents(shape);
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->value = std::make_shared<std::vector<T>>(std::move(data));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value->size(); }

  std::span<const T> data() const { return *node_->value; }

  // Writing through this span after the tensor has been consumed by an op
  // invalidates that op's recorded values. Intended for leaves.
  std::span<T> mutable_data() { return *node_->value; }

  T operator[](std::size_t i) const { return (*node_->value)[i]; }

  T item() const {
    if (size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return (*node_->value)[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  /// Gradient buffer; empty until a backward pass reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Detached copy of the values as a new leaf.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), *node_->value, requires_grad);
  }

  void backward() const {
    if (size() != 1) {
      throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
    }
    if (node_->released) {
      throw std::logic_error("backward() through a graph that was already released");
    }
    if (!node_->requires_grad) return;

    // Owning pointers keep every node alive until the sweep has released it.
    std::vector<NodePtr> order;
    std::vector<NodePtr> stack{node_};
    std::unordered_set<const detail::Node<T>*> seen;
    while (!stack.empty()) {
      NodePtr n = std::move(stack.back());
      stack.pop_back();
      if (!seen.insert(n.get()).second) continue;
      for (auto& in : n->inputs) {
        if (in->requires_grad) stack.push_back(in);
      }
      order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

    node_->ensure_grad()[0] += T(1);
    for (auto& n : order) {
      if (n->leaf) continue;
      if (n->released) {
        throw std::logic_error("backward() through a graph that was already released");
      }
      n->ensure_grad();
      if (n->backward_fn) n->backward_fn(*n);
    }
    for (auto& n : order) {
      if (n->leaf) continue;
      n->released = true;
      n->backward_fn = nullptr;
      n->inputs.clear();
      std::vector<T>().swap(n->grad);
    }
  }

  const NodePtr& node() const { return node_; }

 private:
  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
  }

  NodePtr node_;
};

namespace detail {

/// Builds an op result. Records the graph only when some input needs a
/// gradient and recording is enabled on this thread.
template <typename T>
Tensor<T> make_result(Shape shape, std::shared_ptr<std::vector<T>> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  bool needs = false;
  if (!g_no_grad) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  return make_result<T>(std::move(shape), std::make_shared<std::vector<T>>(std::move(value)),
                        std::move(inputs), std::move(backward_fn));
}

}  // namespace detail
}  // namespace kzr
