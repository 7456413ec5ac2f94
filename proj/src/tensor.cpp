#include "drt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "drt/errors.hpp"

namespace drt {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::uint64_t next_node_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<Index>(values.size()) != shape_numel(shape)) {
    throw DimensionError("element count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  impl_ = std::make_shared<TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<T>>(std::move(values));
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), value),
                requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<TensorImpl<T>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return (*impl_->storage)[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> coords) const {
  if (static_cast<int>(coords.size()) != rank()) {
    throw DimensionError("coordinate rank mismatch for shape " + shape_to_string(shape()));
  }
  Index offset = 0;
  std::size_t i = 0;
  for (Index c : coords) {
    const Index extent = impl_->shape[i++];
    if (c < 0 || c >= extent) throw DimensionError("coordinate out of range");
    offset = offset * extent + c;
  }
  return (*impl_->storage)[static_cast<std::size_t>(offset)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw UsageError("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
  if (!on) impl_->grad.reset();
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!impl_->grad) throw UsageError("tensor has no gradient");
  return *impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  return from_impl(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, *impl_->storage, impl_->requires_grad && is_leaf());
}

template <typename T>
void Tensor<T>::backward() const {
  if (!impl_->grad_fn) throw UsageError("backward() called on a tensor with no graph");
  if (numel() != 1) throw UsageError("backward() requires a scalar, got " + shape_to_string(shape()));

  // Collect every node reachable from the loss.
  std::vector<Node<T>*> nodes;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{impl_->grad_fn.get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      Node<T>* p = in->grad_fn.get();
      if (p && seen.insert(p).second) stack.push_back(p);
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->sequence > b->sequence; });

  std::unordered_map<Node<T>*, std::vector<T>> pending;
  pending[impl_->grad_fn.get()] = std::vector<T>{T(1)};

  for (Node<T>* n : nodes) {
    auto it = pending.find(n);
    if (it == pending.end()) continue;
    std::vector<T> grad_out = std::move(it->second);
    pending.erase(it);

    std::vector<std::span<T>> slots;
    slots.reserve(n->inputs.size());
    for (const auto& in : n->inputs) {
      if (!in->requires_grad) {
        slots.emplace_back();
        continue;
      }
      const std::size_t count = in->storage->size();
      if (in->grad_fn) {
        auto& buf = pending[in->grad_fn.get()];
        if (buf.empty()) buf.assign(count, T(0));
        slots.emplace_back(buf);
      } else {
        if (!in->grad) in->grad.emplace(count, T(0));
        slots.emplace_back(*in->grad);
      }
    }
    n->backward(grad_out, GradSink<T>(std::move(slots)));
  }
}

template class Tensor<float>;
template class Tensor<double>;

namespace {
template <typename T>
bool any_requires_grad(std::initializer_list<Tensor<T>> operands) {
  for (const auto& t : operands) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}
}  // namespace

template <typename T>
Tensor<T> make_op_result(Shape shape, std::shared_ptr<std::vector<T>> storage,
                         const char* name, std::initializer_list<Tensor<T>> operands,
                         typename Node<T>::Backward backward) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->storage = std::move(storage);
  if (grad_mode_enabled() && any_requires_grad<T>(operands)) {
    auto node = std::make_shared<Node<T>>();
    node->sequence = next_node_sequence();
    node->name = name;
    node->inputs.reserve(operands.size());
    for (const auto& t : operands) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor<T>::from_impl(std::move(impl));
}

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, const char* name,
                         std::initializer_list<Tensor<T>> operands,
                         typename Node<T>::Backward backward) {
  if (static_cast<Index>(values.size()) != shape_numel(shape)) {
    throw DimensionError(std::string(name) + ": result size does not match " + shape_to_string(shape));
  }
  return make_op_result<T>(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)),
                           name, operands, std::move(backward));
}

#define DRT_INSTANTIATE(T)                                                                      \
  template Tensor<T> make_op_result<T>(Shape, std::vector<T>, const char*,                     \
                                       std::initializer_list<Tensor<T>>,                         \
                                       typename Node<T>::Backward);                              \
  template Tensor<T> make_op_result<T>(Shape, std::shared_ptr<std::vector<T>>, const char*,    \
                                       std::initializer_list<Tensor<T>>,                         \
                                       typename Node<T>::Backward);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt
