#include "drt/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "drt/errors.hpp"

namespace drt {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  if (a.shape() != b.shape()) {
    throw DimensionError("psnr: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
  }
  const auto x = a.data(), y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-region separable Gaussian filter of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, Index h, Index w,
                                 const std::array<double, kWindow>& g) {
  const Index oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * src[r * w + c + k];
      rows[r * ow + c] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (Index r = 0; r < oh; ++r)
    for (Index c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[(r + k) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ssim: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
  }
  if (a.rank() != 3) throw DimensionError("ssim: expected [C, H, W]");
  const Index channels = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < kWindow || w < kWindow) {
    throw DimensionError("ssim: image " + shape_to_string(a.shape()) + " is smaller than the 11x11 window");
  }
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto g = gaussian_taps();
  const Index plane = h * w;
  const auto x = a.data(), y = b.data();

  double total = 0.0;
  for (Index ch = 0; ch < channels; ++ch) {
    std::vector<double> px(plane), py(plane), pxx(plane), pyy(plane), pxy(plane);
    for (Index i = 0; i < plane; ++i) {
      const double u = x[ch * plane + i], v = y[ch * plane + i];
      px[i] = u;
      py[i] = v;
      pxx[i] = u * u;
      pyy[i] = v * v;
      pxy[i] = u * v;
    }
    const auto mx = filter_valid(px, h, w, g), my = filter_valid(py, h, w, g);
    const auto sxx = filter_valid(pxx, h, w, g), syy = filter_valid(pyy, h, w, g);
    const auto sxy = filter_valid(pxy, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(channels);
}

template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace drt
