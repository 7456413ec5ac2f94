#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
struct Node;

// Shared state behind a Tensor handle. Storage is held through its own
// shared_ptr so backward closures can keep an output buffer alive without
// referencing the impl (which owns the node).
template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> storage;
  std::optional<std::vector<T>> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

/// Accumulation targets handed to a backward rule, one slot per operand.
/// A slot is empty when the operand does not take part in differentiation.
template <typename T>
class GradSink {
 public:
  explicit GradSink(std::vector<std::span<T>> slots) : slots_(std::move(slots)) {}
  std::span<T> operator[](std::size_t i) const { return slots_[i]; }
  bool wants(std::size_t i) const { return !slots_[i].empty(); }

 private:
  std::vector<std::span<T>> slots_;
};

/// One executed differentiable operation. `sequence` grows monotonically with
/// creation, so descending sequence order is a valid reverse topological order.
template <typename T>
struct Node {
  using Backward = std::function<void(std::span<const T> grad_out, const GradSink<T>& sink)>;

  std::uint64_t sequence = 0;
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  Backward backward;
};

std::uint64_t next_node_sequence();

/// Process-wide (per thread) switch controlling whether ops record a graph.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle. Copying a Tensor copies the handle, not the
/// elements; use clone() for an independent leaf.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Extent along `axis`; negative axes count from the back.
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(impl_->storage->size()); }

  std::span<const T> data() const { return *impl_->storage; }
  /// Direct element access for parameter updates between forward passes.
  std::span<T> mutable_data() { return *impl_->storage; }
  T item() const;
  T at(std::initializer_list<Index> coords) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !impl_->grad_fn; }
  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const T> grad() const;
  void zero_grad();

  /// Reverse-mode accumulation from this scalar into every reachable leaf.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl);

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Builds an op result. When grad mode is on and any operand requires grad,
/// the result is linked to a new graph node carrying `backward`.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, const char* name,
                         std::initializer_list<Tensor<T>> operands,
                         typename Node<T>::Backward backward);

/// Variant that shares an existing storage buffer (used by reshape).
template <typename T>
Tensor<T> make_op_result(Shape shape, std::shared_ptr<std::vector<T>> storage,
                         const char* name, std::initializer_list<Tensor<T>> operands,
                         typename Node<T>::Backward backward);

}  // namespace drt
