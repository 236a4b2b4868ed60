#include "normaug/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace naug {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ShapeError::ShapeError(const std::string &op, const Shape &lhs, const Shape &rhs)
    : std::invalid_argument(op + ": shape mismatch " + shape_to_string(lhs) + " vs " +
                            shape_to_string(rhs)) {}

ShapeError::ShapeError(const std::string &op, const std::string &detail)
    : std::invalid_argument(op + ": " + detail) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor", "shape " + shape_to_string(shape) + " holds " +
                                   std::to_string(shape_numel(shape)) + " values, got " +
                                   std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(const Shape &shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape &shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

const Shape &Tensor::shape() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("tensor: undefined");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "expected one element, shape " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::logic_error("tensor: undefined");
  impl_->requires_grad = value;
  if (value && !impl_->node && impl_->grad.size() != impl_->data.size()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
}

bool Tensor::has_history() const { return impl_ && impl_->node != nullptr; }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw std::logic_error("tensor: undefined");
  if (impl_->grad.size() != impl_->data.size()) {
    throw std::logic_error("grad: tensor has no gradient buffer");
  }
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw std::logic_error("tensor: undefined");
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

namespace {

std::vector<detail::TensorImpl *> topo_impls(detail::TensorImpl *root) {
  std::vector<detail::TensorImpl *> order;
  std::unordered_set<detail::TensorImpl *> visited;
  // Iterative post-order DFS; graphs can be deep for long MLP stacks.
  std::vector<std::pair<detail::TensorImpl *, std::size_t>> stack;
  if (root->node) stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto &[impl, next] = stack.back();
    const auto &inputs = impl->node->inputs;
    if (next < inputs.size()) {
      auto *child = inputs[next++].get();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<const detail::Node *> tape_order(const Tensor &root) {
  std::vector<const detail::Node *> nodes;
  if (!root.defined()) return nodes;
  for (auto *impl : topo_impls(root.impl().get())) nodes.push_back(impl->node.get());
  return nodes;
}

void Tensor::backward() const {
  if (!impl_) throw std::logic_error("backward: undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward", "loss must be scalar, got shape " + shape_to_string(shape()));
  }
  if (!impl_->requires_grad) return;  // constant loss: every gradient is zero
  if (!impl_->node) {
    impl_->grad[0] += 1.0;
    return;
  }

  auto order = topo_impls(impl_.get());
  std::unordered_map<detail::TensorImpl *, std::vector<double>> grads;
  grads[impl_.get()] = {1.0};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto *impl = *it;
    auto found = grads.find(impl);
    if (found == grads.end()) continue;
    std::vector<double> grad_out = std::move(found->second);
    grads.erase(found);

    const auto &node = *impl->node;
    std::vector<std::span<double>> grad_in(node.inputs.size());
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto *input = node.inputs[i].get();
      if (!input->requires_grad) continue;
      if (input->node) {
        auto &buf = grads[input];
        if (buf.empty()) buf.assign(input->data.size(), 0.0);
        grad_in[i] = buf;
      } else {
        if (input->grad.size() != input->data.size()) input->grad.assign(input->data.size(), 0.0);
        grad_in[i] = input->grad;
      }
    }
    node.backward(grad_out, grad_in);
  }
}

Tensor make_result(const std::string &op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor &t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->backward = std::move(backward);
  node->inputs.reserve(inputs.size());
  for (auto &t : inputs) node->inputs.push_back(t.impl());
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace naug
