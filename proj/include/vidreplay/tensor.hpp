#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vidreplay/errors.hpp"

namespace vidreplay {

using Shape = std::vector<std::size_t>;

// Tensor storage. Vectorized kernels peel a different number of scalar
// elements depending on the start address, so buffers are always allocated
// at the kernels' alignment to keep results bit-identical run to run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  // Recorded operands; empty for leaves and for results built without grad.
  std::vector<std::shared_ptr<Node>> inputs;
  // Adds this node's grad into the grads of its inputs.
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool released = false;
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Shape-tagged array of doubles, row-major. Copies share the underlying node;
// use detach() for an independent value copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + vidreplay::to_string(shape) + " holds " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("tensor: non-finite initial value");
    }
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
  }

  // Takes ownership of an already aligned buffer; no finiteness check.
  static Tensor from_buffer(Shape shape, Buffer values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + vidreplay::to_string(shape) + " holds " +
                       std::to_string(shape_size(shape)) + " values, got " + std::to_string(values.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from_buffer(std::move(shape), Buffer(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value) {
    const std::size_t n = shape_size(shape);
    return from_buffer(std::move(shape), Buffer(n, value));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1, 1}, {value}, requires_grad);
  }

  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return checked().value.size(); }
  std::size_t rows() const { return rank() >= 1 ? shape()[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape()[1] : 1; }

  std::span<const double> values() const { return checked().value; }
  std::span<const double> grad() const { return checked().grad; }

  double item() const {
    if (size() != 1) throw ShapeError("item: tensor " + vidreplay::to_string(shape()) + " is not a scalar");
    return checked().value[0];
  }

  double operator()(std::size_t r, std::size_t c) const { return checked().value[r * cols() + c]; }

  bool requires_grad() const { return checked().requires_grad; }
  const char* op() const { return checked().op; }

  // In-place overwrite; only meaningful for leaves (parameters).
  void assign(std::span<const double> values) {
    auto& node = checked();
    if (!node.inputs.empty() || node.backward) throw StateError("assign: tensor is not a leaf");
    if (values.size() != node.value.size()) {
      throw ShapeError("assign: expected " + std::to_string(node.value.size()) + " values, got " +
                       std::to_string(values.size()));
    }
    node.value.assign(values.begin(), values.end());
  }

  std::span<double> mutable_values() {
    auto& node = checked();
    if (!node.inputs.empty() || node.backward) throw StateError("mutable_values: tensor is not a leaf");
    return node.value;
  }

  Tensor detach() const { return from_buffer(shape(), checked().value); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  detail::Node& checked() const {
    if (!node_) throw StateError("tensor is undefined");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Wraps a freshly computed value as an op result, recording the graph edge
// when any operand requires a gradient and recording is enabled.
inline Tensor make_result(const char* op, Shape shape, Buffer value,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value (numeric overflow)");
  }
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(value));
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  out.node()->op = op;
  if (needs_grad) {
    auto* node = out.node();
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
    node->backward = std::move(backward);
  }
  return out;
}

inline Tensor make_result(const char* op, Shape shape, Buffer value,
                          const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value (numeric overflow)");
  }
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(value));
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  out.node()->op = op;
  if (needs_grad) {
    auto* node = out.node();
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return out;
}

// Grad buffer of operand i, or nullptr when that operand does not need one.
inline double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad.data() : nullptr;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Every node reached gets a fresh
// zeroed gradient buffer; intermediate nodes are released afterwards.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw StateError("backward: loss tensor was never computed");
  detail::Node* root = loss.node();
  if (root->released) throw StateError("backward: graph already consumed by a previous backward pass");
  if (root->value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + to_string(root->shape));
  }
  if (!root->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) node->grad.assign(node->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
      node->released = true;
    }
  }
}

}  // namespace vidreplay
