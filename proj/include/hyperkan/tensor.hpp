#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyperkan/error.hpp"

namespace hyperkan {

namespace detail {
inline thread_local bool grad_recording = true;
}  // namespace detail

/// Disables graph recording for the lifetime of the guard (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_recording() { return detail::grad_recording; }

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool released = false;  // graph behind this node was consumed by backward()
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

/// Dense row-major N-dimensional array with reverse-mode differentiation.
///
/// A Tensor is a handle: copies share the same node, so a parameter held by a
/// layer and the same parameter handed to an optimizer are one object. Each
/// differentiable op records its inputs and a gradient rule on the output node;
/// backward() walks that tape once and then releases it.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  Tensor(Shape shape, T fill) : node_(std::make_shared<Node>()) {
    check_extents(shape);
    node_->values.assign(hyperkan::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    check_extents(shape);
    if (hyperkan::numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " needs " + std::to_string(hyperkan::numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->values.size(); }

  std::span<const T> values() const { return node_->values; }
  /// Direct write access; only meaningful on leaves (parameters, inputs, buffers).
  std::span<T> mutable_values() { return node_->values; }
  const std::vector<T>& vector() const { return node_->values; }

  T item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->values[0];
  }
  T operator[](std::size_t i) const { return node_->values.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const {
    if (node_->grad.empty()) throw ContractError("grad(): no gradient has been populated");
    return node_->grad;
  }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  bool is_leaf() const { return !node_->backward; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->values); }

  /// Runs the recorded gradient rules from this scalar root. Gradients
  /// accumulate into existing buffers; the graph is freed afterwards.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
    }
  }

  std::shared_ptr<Node> node_;
};

/// Creates an op output; records inputs and the gradient rule only when any
/// input requires a gradient and recording is enabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(TensorNode<T>&)> rule) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_recording()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.inputs.push_back(in.defined() ? in.node() : nullptr);
  node.backward = std::move(rule);
  return out;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      std::function<void(TensorNode<T>&)> rule) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_recording()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(rule);
  return out;
}

/// Gradient buffer of input `i` of `node`, or nullptr when it does not need one.
template <typename T>
T* input_grad(TensorNode<T>& node, std::size_t i) {
  auto& in = node.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return in->grad_buffer().data();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward(): root must hold one element, has shape " + to_string(shape()));
  }
  if (node_->released) throw ContractError("backward(): graph for this root was already consumed");
  if (!node_->requires_grad) throw ContractError("backward(): root does not require grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->grad_buffer();
      n->backward(*n);
    }
  }
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      n->released = true;
    }
  }
}

template <typename T>
void zero_grad(std::span<Tensor<T>> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

}  // namespace hyperkan
