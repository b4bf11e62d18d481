#ifndef AAMULET_TENSOR_HPP_
#define AAMULET_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aamulet/error.hpp"

namespace aamulet {

// Dimensions of a rank-4 tensor, (batch, channels, height, width).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const { return std::int64_t(n) * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

namespace detail {

// One node of the recorded computation graph. The backward closure consumes
// this node's grad and accumulates into the parents' grads; accumulation is
// additive so a value consumed by k ops receives the sum of k contributions.
template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

// Dense rank-4 tensor of reals with an optional reverse-mode autodiff
// attachment. Ops record parents and a backward closure on their outputs
// whenever an input requires gradients; backward() then walks the graph once
// in reverse topological order. A tensor that is not part of a recording is
// a plain immutable value and is safe to share across threads.
//
// Recording and backward for one graph are single-threaded. Leaf tensors
// (parameters) may be shared by concurrent recordings as long as backward
// runs on at most one of them at a time.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape s, S fill = S(0))
      : node_(std::make_shared<detail::Node<S>>()) {
    check_shape(s);
    node_->shape = s;
    node_->value.assign(std::size_t(s.numel()), fill);
  }

  Tensor(Shape s, std::vector<S> values)
      : node_(std::make_shared<detail::Node<S>>()) {
    check_shape(s);
    if (std::int64_t(values.size()) != s.numel())
      throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                       " does not match dims " + s.str());
    node_->shape = s;
    node_->value = std::move(values);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }

  const std::vector<S>& data() const { return node_->value; }
  // In-place mutation is reserved for leaves (parameter updates, finite
  // differencing); mutating an interior node invalidates its recording.
  std::vector<S>& mutable_data() { return node_->value; }

  S at(int n, int c, int h, int w) const {
    const Shape& s = node_->shape;
    return node_->value[((std::int64_t(n) * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool v) {
    if (!node_->parents.empty())
      throw CheckError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty())
      throw CheckError("tensor has no gradient; run backward() first");
    return node_->grad;
  }

  void zero_grad() {
    node_->grad.assign(node_->value.size(), S(0));
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor");
    return node_->value[0];
  }

  // Reverse-mode sweep from a scalar root. Visits every reachable node
  // exactly once in reverse topological order.
  void backward() const {
    if (numel() != 1)
      throw CheckError("backward() requires a scalar root, got " +
                       node_->shape.str());
    std::vector<detail::Node<S>*> order = topo_order(node_.get());
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<S>* node = *it;
      if (!node->backward_fn) continue;
      for (auto& p : node->parents)
        if (p->requires_grad) p->ensure_grad();
      node->backward_fn(*node);
    }
  }

  std::shared_ptr<detail::Node<S>> node() const { return node_; }

 private:
  static void check_shape(const Shape& s) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
      throw ShapeError("tensor dims must be positive, got " + s.str());
  }

  static std::vector<detail::Node<S>*> topo_order(detail::Node<S>* root) {
    std::vector<detail::Node<S>*> order;
    std::unordered_set<detail::Node<S>*> visited;
    struct Frame {
      detail::Node<S>* node;
      std::size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        detail::Node<S>* p = f.node->parents[f.next++].get();
        if (visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node<S>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Builds an op output, recording parents and the backward closure only when
// some input participates in gradient computation.
template <typename S, typename F>
Tensor<S> record(Shape shape, std::vector<S> value,
                 std::vector<Tensor<S>> inputs, F&& backward_fn) {
  Tensor<S> out(shape, std::move(value));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.node()->requires_grad;
  if (needs) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::forward<F>(backward_fn);
  }
  return out;
}

}  // namespace detail

}  // namespace aamulet

#endif  // AAMULET_TENSOR_HPP_
