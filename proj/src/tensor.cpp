#include "samiro/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "samiro/error.hpp"

namespace samiro {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  if (samiro::numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(samiro::numel(shape)) + " elements, data has " +
                         std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = samiro::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, std::string_view op,
                             const std::vector<Tensor>& inputs, BackwardFn<T> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  out.node_->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    out.node_->requires_grad = true;
    out.node_->backward_fn = std::move(backward);
    for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
  }
  return out;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) throw Error("mutable_data: only leaf tensors may be modified");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw DimensionError("item: tensor of shape " + shape_str(node_->shape) + " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw Error("set_requires_grad: only valid on leaf tensors");
  node_->requires_grad = on;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

template <typename T>
void Tensor<T>::backward() const {
  if (node_->data.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  using Node = TensorNode<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  if (node_->grad.empty()) node_->grad.assign(1, T(0));
  node_->grad[0] += T(1);

  std::vector<std::vector<T>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || !n->backward_fn) continue;
    slots.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad.assign(in->data.size(), T(0));
      slots[i] = &in->grad;
    }
    n->backward_fn(n->grad, slots);
    std::vector<T>().swap(n->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace samiro
