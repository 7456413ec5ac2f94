#include "drt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "drt/errors.hpp"

namespace drt {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
using Storage = std::shared_ptr<std::vector<T>>;

template <typename T>
const Storage<T>& storage_of(const Tensor<T>& t) {
  return t.impl()->storage;
}

bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                       shape_to_string(b));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = *storage_of(a);
  const auto& bs = *storage_of(b);
  if (a.shape() == b.shape()) {
    std::vector<T> out(as.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
    return make_op_result<T>(a.shape(), std::move(out), "add", {a, b},
                             [](std::span<const T> g, const GradSink<T>& sink) {
                               for (std::size_t s = 0; s < 2; ++s) {
                                 if (!sink.wants(s)) continue;
                                 auto gs = sink[s];
                                 for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
                               }
                             });
  }
  if (!is_suffix(a.shape(), b.shape())) shape_mismatch("add", a.shape(), b.shape());
  const std::size_t inner = bs.size();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i % inner];
  return make_op_result<T>(a.shape(), std::move(out), "add_broadcast", {a, b},
                           [inner](std::span<const T> g, const GradSink<T>& sink) {
                             if (sink.wants(0)) {
                               auto ga = sink[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (sink.wants(1)) {
                               auto gb = sink[1];
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  const auto& as = *storage_of(a);
  const auto& bs = *storage_of(b);
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return make_op_result<T>(a.shape(), std::move(out), "sub", {a, b},
                           [](std::span<const T> g, const GradSink<T>& sink) {
                             if (sink.wants(0)) {
                               auto ga = sink[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (sink.wants(1)) {
                               auto gb = sink[1];
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                             }
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Storage<T> sa = storage_of(a), sb = storage_of(b);
  std::vector<T> out(sa->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*sa)[i] * (*sb)[i];
  return make_op_result<T>(a.shape(), std::move(out), "mul", {a, b},
                           [sa, sb](std::span<const T> g, const GradSink<T>& sink) {
                             if (sink.wants(0)) {
                               auto ga = sink[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*sb)[i];
                             }
                             if (sink.wants(1)) {
                               auto gb = sink[1];
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*sa)[i];
                             }
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto& xs = *storage_of(x);
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * factor;
  return make_op_result<T>(x.shape(), std::move(out), "scale", {x},
                           [factor](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return make_op_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc)}, "sum", {x},
                           [](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             for (auto& v : gx) v += g[0];
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  return make_op_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, "mean", {x},
                           [n](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             const T share = static_cast<T>(static_cast<double>(g[0]) / n);
                             for (auto& v : gx) v += share;
                           });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_mismatch("matmul", a.shape(), b.shape());
  const Index m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) shape_mismatch("matmul", a.shape(), b.shape());
  const bool shared_b = b.rank() == 2;
  Shape lead(a.shape().begin(), a.shape().end() - 2);
  if (!shared_b) {
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    if (lead != lead_b) shape_mismatch("matmul", a.shape(), b.shape());
  }
  const Index batch = a.numel() / (m * k);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  Storage<T> sa = storage_of(a), sb = storage_of(b);
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (Index i = 0; i < batch; ++i) {
    ConstMap<T> A(sa->data() + i * m * k, m, k);
    ConstMap<T> B(sb->data() + (shared_b ? 0 : i * k * n), k, n);
    MutMap<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return make_op_result<T>(
      std::move(out_shape), std::move(out), "matmul", {a, b},
      [sa, sb, batch, m, k, n, shared_b](std::span<const T> g, const GradSink<T>& sink) {
        for (Index i = 0; i < batch; ++i) {
          ConstMap<T> G(g.data() + i * m * n, m, n);
          ConstMap<T> A(sa->data() + i * m * k, m, k);
          const Index boff = shared_b ? 0 : i * k * n;
          ConstMap<T> B(sb->data() + boff, k, n);
          if (sink.wants(0)) {
            MutMap<T> GA(sink[0].data() + i * m * k, m, k);
            GA.noalias() += G * B.transpose();
          }
          if (sink.wants(1)) {
            MutMap<T> GB(sink[1].data() + boff, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) shape_mismatch("linear", x.shape(), w.shape());
  const Index din = w.dim(0), dout = w.dim(1);
  if (bias.numel() != dout) shape_mismatch("linear", w.shape(), bias.shape());
  const Index rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;

  Storage<T> sx = storage_of(x), sw = storage_of(w);
  std::vector<T> out(static_cast<std::size_t>(rows * dout));
  {
    ConstMap<T> X(sx->data(), rows, din);
    ConstMap<T> W(sw->data(), din, dout);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data().data(), dout);
    MutMap<T> Y(out.data(), rows, dout);
    Y.noalias() = X * W;
    Y.rowwise() += b;
  }
  return make_op_result<T>(
      std::move(out_shape), std::move(out), "linear", {x, w, bias},
      [sx, sw, rows, din, dout](std::span<const T> g, const GradSink<T>& sink) {
        ConstMap<T> G(g.data(), rows, dout);
        if (sink.wants(0)) {
          ConstMap<T> W(sw->data(), din, dout);
          MutMap<T> GX(sink[0].data(), rows, din);
          GX.noalias() += G * W.transpose();
        }
        if (sink.wants(1)) {
          ConstMap<T> X(sx->data(), rows, din);
          MutMap<T> GW(sink[1].data(), din, dout);
          GW.noalias() += X.transpose() * G;
        }
        if (sink.wants(2)) {
          auto gb = sink[2];
          for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < dout; ++c) gb[c] += g[r * dout + c];
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("softmax: axis out of range for " + shape_to_string(x.shape()));
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (int i = ax + 1; i < r; ++i) inner *= x.shape()[i];
  const Index len = x.shape()[ax];

  const auto& xs = *storage_of(x);
  for (T v : xs) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  auto y = std::make_shared<std::vector<T>>(xs.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      T mx = xs[base];
      for (Index l = 1; l < len; ++l) mx = std::max(mx, xs[base + l * inner]);
      T total = 0;
      for (Index l = 0; l < len; ++l) {
        const T e = std::exp(xs[base + l * inner] - mx);
        (*y)[base + l * inner] = e;
        total += e;
      }
      for (Index l = 0; l < len; ++l) (*y)[base + l * inner] /= total;
    }
  }
  return make_op_result<T>(x.shape(), y, "softmax", {x},
                           [y, outer, inner, len](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             const auto& ys = *y;
                             for (Index o = 0; o < outer; ++o) {
                               for (Index in = 0; in < inner; ++in) {
                                 const Index base = o * len * inner + in;
                                 T dot = 0;
                                 for (Index l = 0; l < len; ++l) {
                                   dot += g[base + l * inner] * ys[base + l * inner];
                                 }
                                 for (Index l = 0; l < len; ++l) {
                                   const Index p = base + l * inner;
                                   gx[p] += ys[p] * (g[p] - dot);
                                 }
                               }
                             }
                           });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const Index d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  const Index tokens = x.numel() / d;
  Storage<T> sx = storage_of(x), sg = storage_of(gamma);
  const auto& xs = *sx;
  const auto& gs = *sg;
  const auto& bs = beta.data();

  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * tokens));
  std::vector<T> out(xs.size());
  for (Index t = 0; t < tokens; ++t) {
    const T* row = xs.data() + t * d;
    double mu = 0.0;
    for (Index i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (Index i = 0; i < d; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * t] = mu;
    (*stats)[2 * t + 1] = rstd;
    for (Index i = 0; i < d; ++i) {
      const double xhat = (row[i] - mu) * rstd;
      out[t * d + i] = static_cast<T>(xhat * gs[i] + bs[i]);
    }
  }
  return make_op_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [sx, sg, stats, tokens, d](std::span<const T> g, const GradSink<T>& sink) {
        const auto& xs = *sx;
        const auto& gs = *sg;
        std::vector<double> xhat(static_cast<std::size_t>(d));
        for (Index t = 0; t < tokens; ++t) {
          const double mu = (*stats)[2 * t], rstd = (*stats)[2 * t + 1];
          const T* row = xs.data() + t * d;
          const T* grow = g.data() + t * d;
          double sum_g = 0.0, sum_gx = 0.0;
          for (Index i = 0; i < d; ++i) {
            xhat[i] = (row[i] - mu) * rstd;
            const double gi = static_cast<double>(grow[i]) * gs[i];
            sum_g += gi;
            sum_gx += gi * xhat[i];
          }
          if (sink.wants(0)) {
            T* gx = sink[0].data() + t * d;
            const double inv_d = 1.0 / static_cast<double>(d);
            for (Index i = 0; i < d; ++i) {
              const double gi = static_cast<double>(grow[i]) * gs[i];
              gx[i] += static_cast<T>(rstd * (gi - sum_g * inv_d - xhat[i] * sum_gx * inv_d));
            }
          }
          if (sink.wants(1)) {
            auto gg = sink[1];
            for (Index i = 0; i < d; ++i) gg[i] += static_cast<T>(grow[i] * xhat[i]);
          }
          if (sink.wants(2)) {
            auto gb = sink[2];
            for (Index i = 0; i < d; ++i) gb[i] += grow[i];
          }
        }
      });
}

namespace {

struct ConvGeometry {
  Index batch, cin, h, w, cout, kh, kw, hout, wout;
  int stride, padding;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return hout * wout; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const Index np = g.pixels();
  for (Index c = 0; c < g.cin; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        T* dst = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (Index oh = 0; oh < g.hout; ++oh) {
          const Index ih = oh * g.stride - g.padding + i;
          T* drow = dst + oh * g.wout;
          if (ih < 0 || ih >= g.h) {
            std::fill(drow, drow + g.wout, T(0));
            continue;
          }
          const T* srow = x + (c * g.h + ih) * g.w;
          for (Index ow = 0; ow < g.wout; ++ow) {
            const Index iw = ow * g.stride - g.padding + j;
            drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
  const Index np = g.pixels();
  for (Index c = 0; c < g.cin; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const T* src = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (Index oh = 0; oh < g.hout; ++oh) {
          const Index ih = oh * g.stride - g.padding + i;
          if (ih < 0 || ih >= g.h) continue;
          T* xrow = x + (c * g.h + ih) * g.w;
          const T* srow = src + oh * g.wout;
          for (Index ow = 0; ow < g.wout; ++ow) {
            const Index iw = ow * g.stride - g.padding + j;
            if (iw >= 0 && iw < g.w) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int padding) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) shape_mismatch("conv2d", x.shape(), w.shape());
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
                   stride, padding};
  if (bias.numel() != geo.cout) shape_mismatch("conv2d", w.shape(), bias.shape());
  const Index span_h = geo.h + 2 * padding - geo.kh;
  const Index span_w = geo.w + 2 * padding - geo.kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw DimensionError("conv2d: kernel " + shape_to_string(w.shape()) + " with stride " +
                         std::to_string(stride) + ", padding " + std::to_string(padding) +
                         " gives a non-integral output extent for input " + shape_to_string(x.shape()));
  }
  geo.hout = span_h / stride + 1;
  geo.wout = span_w / stride + 1;

  Storage<T> sx = storage_of(x), sw = storage_of(w);
  const Index in_plane = geo.cin * geo.h * geo.w;
  const Index out_plane = geo.cout * geo.pixels();
  std::vector<T> out(static_cast<std::size_t>(geo.batch * out_plane));
  std::vector<T> cols(static_cast<std::size_t>(geo.patch() * geo.pixels()));
  ConstMap<T> W(sw->data(), geo.cout, geo.patch());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data().data(), geo.cout);
  for (Index n = 0; n < geo.batch; ++n) {
    im2col(sx->data() + n * in_plane, geo, cols.data());
    ConstMap<T> C(cols.data(), geo.patch(), geo.pixels());
    MutMap<T> Y(out.data() + n * out_plane, geo.cout, geo.pixels());
    Y.noalias() = W * C;
    Y.colwise() += b;
  }
  return make_op_result<T>(
      Shape{geo.batch, geo.cout, geo.hout, geo.wout}, std::move(out), "conv2d", {x, w, bias},
      [sx, sw, geo, in_plane, out_plane](std::span<const T> g, const GradSink<T>& sink) {
        std::vector<T> cols(static_cast<std::size_t>(geo.patch() * geo.pixels()));
        std::vector<T> gcols;
        if (sink.wants(0)) gcols.resize(cols.size());
        ConstMap<T> W(sw->data(), geo.cout, geo.patch());
        for (Index n = 0; n < geo.batch; ++n) {
          ConstMap<T> G(g.data() + n * out_plane, geo.cout, geo.pixels());
          if (sink.wants(1)) {
            im2col(sx->data() + n * in_plane, geo, cols.data());
            ConstMap<T> C(cols.data(), geo.patch(), geo.pixels());
            MutMap<T> GW(sink[1].data(), geo.cout, geo.patch());
            GW.noalias() += G * C.transpose();
          }
          if (sink.wants(0)) {
            MutMap<T> GC(gcols.data(), geo.patch(), geo.pixels());
            GC.noalias() = W.transpose() * G;
            col2im_add(gcols.data(), geo, sink[0].data() + n * in_plane);
          }
          if (sink.wants(2)) {
            auto gb = sink[2];
            for (Index c = 0; c < geo.cout; ++c) {
              const T* row = g.data() + n * out_plane + c * geo.pixels();
              T acc = 0;
              for (Index p = 0; p < geo.pixels(); ++p) acc += row[p];
              gb[c] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Storage<T> sx = storage_of(x);
  std::vector<T> out(sx->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = (*sx)[i];
    out[i] = v >= 0 ? v : slope * v;
  }
  return make_op_result<T>(x.shape(), std::move(out), "leaky_relu", {x},
                           [sx, slope](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += (*sx)[i] >= 0 ? g[i] : slope * g[i];
                             }
                           });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  Storage<T> sx = storage_of(x);
  std::vector<T> out(sx->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = (*sx)[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  return make_op_result<T>(x.shape(), std::move(out), "gelu", {x},
                           [sx](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const double v = (*sx)[i];
                               const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                               const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                               gx[i] += static_cast<T>(g[i] * (cdf + v * pdf));
                             }
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  return make_op_result<T>(std::move(shape), storage_of(x), "reshape", {x},
                           [](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
}

std::vector<Index> permutation_index(const Shape& shape, const std::vector<int>& axes) {
  const int r = static_cast<int>(shape.size());
  if (static_cast<int>(axes.size()) != r) throw DimensionError("permute: axis count mismatch");
  std::vector<int> check(axes);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < r; ++i) {
    if (check[i] != i) throw DimensionError("permute: axes are not a permutation");
  }
  std::vector<Index> src_stride(r);
  Index s = 1;
  for (int i = r - 1; i >= 0; --i) {
    src_stride[i] = s;
    s *= shape[i];
  }
  Shape out_shape(r);
  std::vector<Index> stride(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = shape[axes[i]];
    stride[i] = src_stride[axes[i]];
  }
  std::vector<Index> index(static_cast<std::size_t>(s));
  std::vector<Index> coord(r, 0);
  Index offset = 0;
  for (Index flat = 0; flat < s; ++flat) {
    index[flat] = offset;
    for (int i = r - 1; i >= 0; --i) {
      offset += stride[i];
      if (++coord[i] < out_shape[i]) break;
      offset -= stride[i] * out_shape[i];
      coord[i] = 0;
    }
  }
  return index;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.dim(axes[i]);
  auto index = std::make_shared<const std::vector<Index>>(permutation_index(x.shape(), axes));
  return gather(x, std::move(out_shape), std::move(index));
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape,
                 std::shared_ptr<const std::vector<Index>> index) {
  const Index n = shape_numel(out_shape);
  if (static_cast<Index>(index->size()) != n) {
    throw DimensionError("gather: index count does not match " + shape_to_string(out_shape));
  }
  const auto& xs = *storage_of(x);
  const Index limit = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index src = (*index)[i];
    if (src < 0 || src >= limit) throw DimensionError("gather: index out of range");
    out[i] = xs[src];
  }
  return make_op_result<T>(std::move(out_shape), std::move(out), "gather", {x},
                           [index](std::span<const T> g, const GradSink<T>& sink) {
                             auto gx = sink[0];
                             const auto& idx = *index;
                             for (std::size_t i = 0; i < g.size(); ++i) gx[idx[i]] += g[i];
                           });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) shape_mismatch("mse_loss", pred.shape(), target.shape());
  Storage<T> sp = storage_of(pred), st = storage_of(target);
  double acc = 0.0;
  for (std::size_t i = 0; i < sp->size(); ++i) {
    const double d = static_cast<double>((*sp)[i]) - static_cast<double>((*st)[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(sp->size());
  return make_op_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, "mse_loss",
                           {pred, target},
                           [sp, st, n](std::span<const T> g, const GradSink<T>& sink) {
                             const double coef = 2.0 * static_cast<double>(g[0]) / n;
                             for (std::size_t i = 0; i < sp->size(); ++i) {
                               const T d = static_cast<T>(coef * (static_cast<double>((*sp)[i]) -
                                                                  static_cast<double>((*st)[i])));
                               if (sink.wants(0)) sink[0][i] += d;
                               if (sink.wants(1)) sink[1][i] -= d;
                             }
                           });
}

#define DRT_INSTANTIATE(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> softmax(const Tensor<T>&, int);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                          \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                       \
  template Tensor<T> transpose_last(const Tensor<T>&);                                         \
  template Tensor<T> gather(const Tensor<T>&, Shape, std::shared_ptr<const std::vector<Index>>); \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt
