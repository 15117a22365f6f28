#pragma once

#include "rwm/core.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rwm {

template <typename Scalar>
class Tensor;

namespace detail {

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into parents.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  Array& ensure_grad() {
    if (!has_grad) {
      grad = Array::Zero(value.size());
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

/// Whether ops on this thread record backward rules. Tapes are per thread.
bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables recording on the current thread for its lifetime, for code that
/// needs gradients whatever the caller's mode.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major n-d array with an optional gradient. Copies share storage
/// (handle semantics); use `clone()` or `detach()` for an independent value.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value) { return full(Shape{}, value); }

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }

  const Array& data() const { return node_->value; }
  Array& data() { return node_->value; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return node_->has_grad; }
  const Array& grad() const;
  Array& grad();
  void zero_grad();

  /// New leaf holding a copy of the value, disconnected from any tape.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), data().template cast<Other>());
  }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

/// Reverse-topological replay order of everything reachable from a root.
template <typename Scalar>
struct Tape {
  std::vector<detail::Node<Scalar>*> order;  // inputs before consumers

  static Tape record(const Tensor<Scalar>& root);
};

/// Populates grad of every reachable leaf that requires grad. Leaf
/// gradients accumulate across calls until zeroed.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

/// p <- p - lr * grad(p), then zeroes the gradients.
template <typename Scalar>
void sgd_step(std::span<Tensor<Scalar>> params, double lr);

/// SGD with optional heavy-ball momentum. momentum = 0 reduces to sgd_step.
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(std::span<Tensor<Scalar>> params, double lr);

 private:
  double momentum_;
  std::vector<typename Tensor<Scalar>::Array> velocity_;
};

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array value,
                           const char* op,
                           std::vector<typename Tensor<Scalar>::NodePtr> parents,
                           std::function<void(detail::Node<Scalar>&)> backward_rule);

}  // namespace rwm
