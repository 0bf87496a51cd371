#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace samiro {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode;

// Backward rule of a recorded op. `grad_out` is the upstream gradient of the
// op's output; `input_grads[i]` points at input i's gradient buffer (already
// sized and zero-initialised on first touch) or is null when input i does not
// require a gradient. Rules accumulate with +=.
template <typename T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> input_grads)>;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until written by backward
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<T> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
};

/// Dense row-major tensor with an optional reverse-mode tape node.
///
/// Copies share the underlying node (handle semantics). Data is immutable
/// once created except through mutable_data() on leaves, which the optimizer
/// uses for in-place parameter updates. A graph is owned by one thread.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  // Records the result of a custom op on the tape. The backward rule is kept
  // only when at least one input requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> data, std::string_view op,
                        const std::vector<Tensor>& inputs, BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data();
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->is_leaf(); }
  std::string_view op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; all zeros if backward never reached this tensor.
  std::vector<T> grad() const;
  void zero_grad() { node_->grad.clear(); }

  // New leaf sharing no tape history; data is copied.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  // Reverse pass from a scalar. Leaf gradients accumulate across calls;
  // interior gradients are recomputed each call.
  void backward() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

}  // namespace samiro
