#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace naug {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

// Raised when operand shapes do not conform; the message names the
// operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string &op, const Shape &lhs, const Shape &rhs);
  ShapeError(const std::string &op, const std::string &detail);
};

class Tensor;

// Receives the output gradient and one writable buffer per input. Buffers of
// inputs that do not require a gradient are empty spans.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

namespace detail {
struct TensorImpl;
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // leaves only; allocated when requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};
}  // namespace detail

// Dense row-major f64 tensor. Copies are shallow handles onto the same
// storage, the same way parameters are shared between paths of a model.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape &shape, bool requires_grad = false);
  static Tensor full(const Shape &shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape &shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access bypasses the tape; used by optimizers and loaders.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  // True for tensors produced by a recorded operation.
  bool has_history() const;

  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the values.
  Tensor detach() const;
  bool same_storage(const Tensor &other) const { return impl_ == other.impl_; }
  const void *storage_id() const { return impl_.get(); }

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls until zero_grad().
  void backward() const;

  const std::shared_ptr<detail::TensorImpl> &impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(const std::string &, Shape, std::vector<double>, std::vector<Tensor>,
                            BackwardFn);
};

// Builds an operation output and records it on the tape when any input
// requires a gradient and recording is enabled.
Tensor make_result(const std::string &op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

bool grad_enabled();

// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool previous_;
};

// Returns the operations reachable from `root` in topological order (inputs
// before consumers). This is the replay order of backward().
std::vector<const detail::Node *> tape_order(const Tensor &root);

}  // namespace naug
