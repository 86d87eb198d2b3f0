#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "stf/errors.hpp"

namespace stf::ad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Storage node behind a Tensor handle. `grad` is the persistent accumulator
// visible to callers; `adj` and `reached` are per-backward-pass scratch
// managed by the Tape.
template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  std::vector<S> adj;
  bool reached = false;
  bool requires_grad = false;
};

// Cheap shared handle to a dense multi-dimensional array. Copying a Tensor
// aliases the underlying node; use detached() for an independent copy.
template <typename S>
class BasicTensor {
 public:
  using Scalar = S;

  BasicTensor() = default;

  static BasicTensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    if (n != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode<S>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }

  static BasicTensor full(Shape shape, S fill, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    auto node = std::make_shared<TensorNode<S>>();
    node->shape = std::move(shape);
    node->value.assign(n, fill);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
  }

  static BasicTensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  const std::vector<S>& data() const { return node_->value; }
  std::vector<S>& data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty()) throw ValueError("tensor has no gradient populated");
    return node_->grad;
  }
  void clear_grad() { node_->grad.clear(); }

  S item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar, got shape " + shape_str(shape()));
    return node_->value[0];
  }

  // Independent copy of the values with gradient tracking off.
  BasicTensor detached() const {
    return from(node_->shape, node_->value, false);
  }

  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorNode<S>> node) : node_(std::move(node)) {}

  std::shared_ptr<TensorNode<S>> node_;

  template <typename>
  friend class Tape;
};

using Tensor = BasicTensor<double>;

}  // namespace stf::ad
