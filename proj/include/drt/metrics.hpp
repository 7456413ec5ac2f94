#pragma once

#include "drt/tensor.hpp"

namespace drt {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) over every entry; kPsnrCap when the inputs match.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

/// Mean structural similarity of [C, H, W] images, averaged over channels.
/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, peak 1, evaluated
/// on window positions fully inside the image.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace drt
