#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cfa_lab/errors.hpp"

namespace cfa_lab {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Dense array of up to four axes (batch, channel, height, width) with an
// optional reverse-mode gradient. Values are immutable once an op has produced
// them; ops always allocate fresh outputs. The library runs on float
// (`Grid`); the double instantiation exists for finite-difference oracles.
template <typename T>
class BasicGrid {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicGrid() = default;
  explicit BasicGrid(std::shared_ptr<NodeType> n) : node_(std::move(n)) {}

  static BasicGrid zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static BasicGrid full(Shape shape, T v, bool requires_grad = false) {
    auto n = shape_size(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static BasicGrid scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  static BasicGrid from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape.empty() || shape.size() > 4)
      throw DimensionError("grid rank must be 1..4, got " + std::to_string(shape.size()));
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (shape[i] <= 0) throw DimensionError("grid axis " + std::to_string(i) + " has non-positive size");
    if (values.size() != shape_size(shape))
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                           shape_str(shape));
    auto node = std::make_shared<NodeType>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return BasicGrid(std::move(node));
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on grid of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Leaf parameters are the only grids mutated in place (by an optimizer).
  std::vector<T>& mutable_values() { return node_->value; }

  // Copy with no history and no gradient.
  BasicGrid detach() const { return from(shape(), node_->value, false); }

  template <typename U>
  BasicGrid<U> cast(bool requires_grad = false) const {
    return BasicGrid<U>::from(shape(), std::vector<U>(node_->value.begin(), node_->value.end()), requires_grad);
  }

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

using Grid = BasicGrid<float>;
using GridD = BasicGrid<double>;

namespace detail {

// Builds an op output. History is only recorded when some input needs a
// gradient, so inference never retains a tape.
template <typename T>
BasicGrid<T> make_output(Shape shape, std::vector<T> value, const std::vector<BasicGrid<T>>& inputs,
                         std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const auto& g : inputs) any = any || g.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& g : inputs) node->inputs.push_back(g.node());
    node->backward = std::move(backward);
  }
  return BasicGrid<T>(std::move(node));
}

// Gradient sink for an input: nullptr when that input is not differentiable.
template <typename T>
T* grad_of(Node<T>& n) {
  if (!n.requires_grad) return nullptr;
  n.ensure_grad();
  return n.grad.data();
}

}  // namespace detail

// Reverse sweep from a scalar root (seed 1) over the recorded tape.
template <typename T>
void backward(const BasicGrid<T>& root) {
  using N = detail::Node<T>;
  if (root.size() != 1) throw DimensionError("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<N*> order;
  std::unordered_set<N*> seen;
  std::vector<std::pair<N*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      N* child = n->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace cfa_lab
