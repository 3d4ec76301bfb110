#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atgn/error.hpp"

namespace atgn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One vertex of the dynamic graph. Non-leaf nodes keep their inputs and a
// closure that scatters `grad` into the inputs' grad buffers.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return inputs.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

#ifndef NDEBUG
inline void check_finite(const Node& n) {
  for (double v : n.data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + n.op + "'");
  }
}
#else
inline void check_finite(const Node&) {}
#endif

}  // namespace detail

// Dense row-major tensor of doubles with optional gradient tracking. Copies
// share the underlying node; use `clone()` for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                           " elements but " + std::to_string(data.size()) + " were given");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // In-place access for leaves (parameter updates, test fixtures).
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (numel() != 1) throw ArgumentError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape.at(1) + j]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ArgumentError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  // Independent leaf with the same values.
  Tensor clone(bool requires_grad = false) const { return from(shape(), node_->data, requires_grad); }

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result. The closure is only retained when some input is
// tracked, so untracked forward passes record no graph.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool tracked = false;
  for (const auto& t : inputs) tracked = tracked || t.requires_grad();
  if (tracked) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  check_finite(*node);
  return Tensor(std::move(node));
}

// Grad buffer of input `i` if it is tracked, else nullptr.
inline double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

}  // namespace detail

// Gradients of tracked leaves reached by one backward pass.
class GradientMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  const std::vector<double>& at(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) throw ArgumentError("tensor has no gradient in this map");
    return it->second;
  }
  std::size_t size() const { return grads_.size(); }
  void insert(const detail::Node* id, std::vector<double> g) { grads_[id] = std::move(g); }

 private:
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into the
// leaves' grad buffers; intermediate buffers are reset on every call.
inline GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ArgumentError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ArgumentError("loss is not reachable from any tracked leaf");

  // Iterative post-order DFS; input order is fixed so traversal is deterministic.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    else n->ensure_grad();
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }

  GradientMap out;
  for (detail::Node* n : order) {
    if (n->is_leaf()) out.insert(n, n->grad);
  }
  return out;
}

}  // namespace atgn
