#pragma once

#include <memory>
#include <vector>

#include "drt/tensor.hpp"

namespace drt {

// Differentiable kernels over Tensor<T>. Every reduction runs in a fixed index
// order, so repeated evaluation is bitwise reproducible.

/// a + b. `b` must equal `a` in shape or match a suffix of it (broadcast over
/// the leading axes of `a`).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Batched contraction [..., m, k] x [..., k, n]. A rank-2 `b` is shared by
/// every batch entry of `a`.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., D_in] * w[D_in, D_out] + bias[D_out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

/// Cross-correlation with zero padding. x [B, C_in, H, W], w [C_out, C_in, k, k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int padding);

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
/// Swaps the last two axes.
template <typename T> Tensor<T> transpose_last(const Tensor<T>& x);

/// out.flat[i] = x.flat[index[i]]. Backward scatter-adds. Indices may repeat.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape,
                 std::shared_ptr<const std::vector<Index>> index);

/// Mean of squared differences over every entry.
template <typename T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Flat source offsets realizing a permutation of `shape`.
std::vector<Index> permutation_index(const Shape& shape, const std::vector<int>& axes);

}  // namespace drt
