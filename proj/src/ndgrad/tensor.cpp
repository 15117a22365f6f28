#include "rwm/ndgrad/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace rwm {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw InvalidArgument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { t_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, bool requires_grad)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  node_->value = Array::Zero(shape_numel(shape));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  }
  node_->value = std::move(values);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data().setConstant(value);
  return t;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw InvalidState("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Tensor<Scalar>::grad() const {
  if (!node_->has_grad) throw InvalidState("tensor has no gradient");
  return node_->grad;
}

template <typename Scalar>
typename Tensor<Scalar>::Array& Tensor<Scalar>::grad() {
  return node_->ensure_grad();
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad.resize(0);
  node_->has_grad = false;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), data());
}

template <typename Scalar>
Tape<Scalar> Tape<Scalar>::record(const Tensor<Scalar>& root) {
  Tape tape;
  std::unordered_set<detail::Node<Scalar>*> seen;
  // Iterative post-order DFS; recursion depth would otherwise follow the graph depth.
  std::vector<std::pair<detail::Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw InvalidArgument("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Tape<Scalar> tape = Tape<Scalar>::record(loss);
  for (auto* node : tape.order) {
    if (!node->is_leaf()) {
      node->grad.resize(0);
      node->has_grad = false;
    }
  }
  auto* root = loss.node().get();
  root->ensure_grad()[0] += Scalar(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    auto* node = *it;
    if (node->is_leaf() || !node->has_grad) continue;
    node->backward(*node);
    if (node != root) {
      node->grad.resize(0);
      node->has_grad = false;
    }
  }
}

template <typename Scalar>
void sgd_step(std::span<Tensor<Scalar>> params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) throw InvalidState("sgd_step: parameter without gradient");
  }
  for (auto& p : params) {
    p.data() -= Scalar(lr) * p.grad();
    p.zero_grad();
  }
}

template <typename Scalar>
void Sgd<Scalar>::step(std::span<Tensor<Scalar>> params, double lr) {
  if (momentum_ == 0.0) {
    sgd_step(params, lr);
    return;
  }
  for (auto& p : params) {
    if (!p.has_grad()) throw InvalidState("sgd_step: parameter without gradient");
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (auto& p : params) velocity_.push_back(Tensor<Scalar>::Array::Zero(p.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = Scalar(momentum_) * velocity_[i] + params[i].grad();
    params[i].data() -= Scalar(lr) * velocity_[i];
    params[i].zero_grad();
  }
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array value, const char* op,
                           std::vector<typename Tensor<Scalar>::NodePtr> parents,
                           std::function<void(detail::Node<Scalar>&)> backward_rule) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.op = op;
  node.parents = std::move(parents);
  node.backward = std::move(backward_rule);
  return out;
}

#define RWM_INSTANTIATE(S)                                                             \
  template class Tensor<S>;                                                            \
  template struct Tape<S>;                                                             \
  template class Sgd<S>;                                                               \
  template void backward<S>(const Tensor<S>&);                                         \
  template void sgd_step<S>(std::span<Tensor<S>>, double);                             \
  template Tensor<S> make_result<S>(Shape, Tensor<S>::Array, const char*,              \
                                    std::vector<Tensor<S>::NodePtr>,                   \
                                    std::function<void(detail::Node<S>&)>);
RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)
#undef RWM_INSTANTIATE

}  // namespace rwm
