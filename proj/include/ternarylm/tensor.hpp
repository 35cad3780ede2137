#pragma once

// Dense row-major tensor with a tape-free reverse-mode graph. Each result of a
// differentiable op owns a GraphNode pointing at its inputs; backward() walks
// the nodes reachable from a scalar loss in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ternarylm/error.hpp"

namespace ternarylm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorImpl;

template <class T>
struct GraphNode {
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;
  using BackwardFn = std::function<void(TensorImpl<T>& out, std::span<const ImplPtr> inputs)>;

  std::string_view op;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
  bool consumed = false;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GraphNode<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
class Tensor {
 public:
  using value_type = T;
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor from_impl(ImplPtr impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  /// Size of the trailing axis.
  std::size_t cols() const { return impl_->shape.back(); }
  /// Product of all but the trailing axis.
  std::size_t rows() const { return numel() / cols(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return !impl_->node; }

  /// Only leaves may toggle gradient tracking.
  void set_requires_grad(bool flag) {
    if (!is_leaf()) throw GraphError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = flag;
    if (flag) {
      impl_->ensure_grad();
    } else {
      impl_->grad.clear();
    }
  }

  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  /// Leaf copy of the values, outside any graph.
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  const ImplPtr& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  ImplPtr impl_;
};

/// Builds an op result. A graph node is attached only when gradients are
/// enabled and some input requires them.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      std::string_view op, typename GraphNode<T>::BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<GraphNode<T>>();
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return Tensor<T>::from_impl(std::move(impl));
}

/// Child visiting order used when sorting the graph. Both orders are valid
/// topological orders; results agree up to floating-point summation order.
enum class TopoOrder { inputs_first_to_last, inputs_last_to_first };

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad
/// and consumes the graph.
template <class T>
void backward(const Tensor<T>& loss, TopoOrder order = TopoOrder::inputs_first_to_last) {
  if (!loss.defined() || loss.numel() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.impl();
  if (!root->requires_grad) throw GraphError("loss does not depend on any tensor requiring grad");
  if (!root->node) {
    root->ensure_grad();
    root->grad[0] += T(1);
    return;
  }
  if (root->node->consumed) throw GraphError("graph already consumed by a previous backward pass");

  // Iterative post-order DFS. Shared pointers keep every node alive until the
  // pass ends, since consumed nodes drop their input references.
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;
  std::vector<ImplPtr> topo;
  std::unordered_set<const TensorImpl<T>*> visited;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& ins = impl->node->inputs;
    if (next < ins.size()) {
      const std::size_t idx =
          order == TopoOrder::inputs_first_to_last ? next : ins.size() - 1 - next;
      ++next;
      const ImplPtr& child = ins[idx];
      if (child->node && child->requires_grad && !visited.count(child.get())) {
        if (child->node->consumed) throw GraphError("graph already consumed by a previous backward pass");
        visited.insert(child.get());
        stack.emplace_back(child, 0);
      }
    } else {
      topo.push_back(impl);
      stack.pop_back();
    }
  }

  root->grad.assign(1, T(1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl<T>* impl = it->get();
    auto& node = *impl->node;
    impl->ensure_grad();
    for (const auto& in : node.inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    node.backward(*impl, node.inputs);
    node.consumed = true;
    node.backward = nullptr;
    node.inputs.clear();
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

}  // namespace ternarylm
