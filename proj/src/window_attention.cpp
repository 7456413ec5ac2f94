#include "drt/window_attention.hpp"

#include <cmath>
#include <string>

#include "drt/errors.hpp"
#include "drt/ops.hpp"
#include "index_cache.hpp"

namespace drt {

namespace {
enum IndexTag : Index { kPad = 1, kPartition, kReverse, kBias, kQuery, kKeyT, kValue, kMerge };

void require_map(const char* op, const Shape& s) {
  if (s.size() != 4) throw DimensionError(std::string(op) + ": expected [B, H, W, D], got " + shape_to_string(s));
}
}  // namespace

WindowLayout make_window_layout(Index height, Index width, Index window) {
  if (window < 1) throw DimensionError("window size must be >= 1");
  if (height < 1 || width < 1) throw DimensionError("map extents must be >= 1");
  WindowLayout l;
  l.height = height;
  l.width = width;
  l.window = window;
  l.padded_height = (height + window - 1) / window * window;
  l.padded_width = (width + window - 1) / window * window;
  l.pad_bottom = l.padded_height - height;
  l.pad_right = l.padded_width - width;
  return l;
}

Index reflect_index(Index i, Index length) {
  if (length == 1) return 0;
  const Index period = 2 * (length - 1);
  Index r = i % period;
  if (r < 0) r += period;
  return r < length ? r : period - r;
}

template <typename T>
std::pair<Tensor<T>, WindowLayout> pad_to_window_multiple(const Tensor<T>& x, Index window) {
  require_map("pad_to_window_multiple", x.shape());
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  WindowLayout layout = make_window_layout(h, w, window);
  if (layout.pad_bottom == 0 && layout.pad_right == 0) return {x, layout};
  const Index ph = layout.padded_height, pw = layout.padded_width;
  auto index = detail::cached_index({kPad, b, h, w, d, window}, [&] {
    std::vector<Index> idx(static_cast<std::size_t>(b * ph * pw * d));
    Index o = 0;
    for (Index n = 0; n < b; ++n)
      for (Index r = 0; r < ph; ++r) {
        const Index sr = reflect_index(r, h);
        for (Index c = 0; c < pw; ++c) {
          const Index base = ((n * h + sr) * w + reflect_index(c, w)) * d;
          for (Index e = 0; e < d; ++e) idx[o++] = base + e;
        }
      }
    return idx;
  });
  return {gather(x, Shape{b, ph, pw, d}, index), layout};
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, Index window) {
  require_map("window_partition", x.shape());
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  if (window < 1 || h % window != 0 || w % window != 0) {
    throw DimensionError("window_partition: extents " + shape_to_string(x.shape()) +
                         " are not multiples of window " + std::to_string(window));
  }
  const Index nh = h / window, nw = w / window, tokens = window * window;
  auto index = detail::cached_index({kPartition, b, h, w, d, window}, [&] {
    std::vector<Index> idx(static_cast<std::size_t>(b * h * w * d));
    Index o = 0;
    for (Index n = 0; n < b; ++n)
      for (Index wy = 0; wy < nh; ++wy)
        for (Index wx = 0; wx < nw; ++wx)
          for (Index ty = 0; ty < window; ++ty)
            for (Index tx = 0; tx < window; ++tx) {
              const Index base = ((n * h + wy * window + ty) * w + wx * window + tx) * d;
              for (Index e = 0; e < d; ++e) idx[o++] = base + e;
            }
    return idx;
  });
  return gather(x, Shape{b * nh * nw, tokens, d}, index);
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout) {
  if (windows.rank() != 3) throw DimensionError("window_reverse: expected [B*nW, M*M, D]");
  const Index count = layout.window_count();
  const Index tokens = layout.tokens_per_window();
  if (windows.dim(1) != tokens || windows.dim(0) % count != 0) {
    throw DimensionError("window_reverse: " + shape_to_string(windows.shape()) +
                         " is inconsistent with a layout of " + std::to_string(count) +
                         " windows of " + std::to_string(tokens) + " tokens");
  }
  const Index b = windows.dim(0) / count, d = windows.dim(2);
  const Index h = layout.height, w = layout.width, m = layout.window, nw = layout.windows_across();
  auto index = detail::cached_index({kReverse, b, h, w, d, m}, [&] {
    std::vector<Index> idx(static_cast<std::size_t>(b * h * w * d));
    Index o = 0;
    for (Index n = 0; n < b; ++n)
      for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
          const Index win = n * count + (r / m) * nw + c / m;
          const Index tok = (r % m) * m + c % m;
          const Index base = (win * tokens + tok) * d;
          for (Index e = 0; e < d; ++e) idx[o++] = base + e;
        }
    return idx;
  });
  return gather(windows, Shape{b, h, w, d}, index);
}

std::vector<Index> relative_position_index(Index window) {
  const Index tokens = window * window;
  const Index span = 2 * window - 1;
  std::vector<Index> idx(static_cast<std::size_t>(tokens * tokens));
  for (Index i = 0; i < tokens; ++i) {
    for (Index j = 0; j < tokens; ++j) {
      const Index dr = i / window - j / window;
      const Index dc = i % window - j % window;
      idx[i * tokens + j] = (dr + window - 1) * span + (dc + window - 1);
    }
  }
  return idx;
}

template <typename T>
Tensor<T> relative_position_bias(Index window, const Tensor<T>& table, Index heads) {
  const Index span = 2 * window - 1;
  if (table.rank() != 2 || table.dim(0) != span * span || table.dim(1) != heads) {
    throw DimensionError("relative_position_bias: table " + shape_to_string(table.shape()) +
                         " does not match window " + std::to_string(window) + " with " +
                         std::to_string(heads) + " heads");
  }
  const Index tokens = window * window;
  auto index = detail::cached_index({kBias, window, heads}, [&] {
    const auto rel = relative_position_index(window);
    std::vector<Index> idx(static_cast<std::size_t>(heads * tokens * tokens));
    for (Index h = 0; h < heads; ++h)
      for (Index p = 0; p < tokens * tokens; ++p) idx[h * tokens * tokens + p] = rel[p] * heads + h;
    return idx;
  });
  return gather(table, Shape{heads, tokens, tokens}, index);
}

namespace {

// Head-split views of the fused [nWin, T, 3D] projection. `slot` selects Q, K or V.
detail::IndexPtr head_split_index(IndexTag tag, Index wins, Index tokens, Index dim, Index heads,
                                  Index slot, bool transposed) {
  return detail::cached_index({tag, wins, tokens, dim, heads}, [=] {
    const Index dk = dim / heads;
    std::vector<Index> idx(static_cast<std::size_t>(wins * tokens * dim));
    Index o = 0;
    for (Index w = 0; w < wins; ++w)
      for (Index h = 0; h < heads; ++h) {
        if (!transposed) {
          for (Index t = 0; t < tokens; ++t)
            for (Index e = 0; e < dk; ++e) idx[o++] = (w * tokens + t) * 3 * dim + slot * dim + h * dk + e;
        } else {
          for (Index e = 0; e < dk; ++e)
            for (Index t = 0; t < tokens; ++t) idx[o++] = (w * tokens + t) * 3 * dim + slot * dim + h * dk + e;
        }
      }
    return idx;
  });
}

}  // namespace

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& tokens, const AttentionParams<T>& p) {
  if (tokens.rank() != 3) throw DimensionError("multi_head_attention: expected [nWin, T, D]");
  const Index wins = tokens.dim(0), count = tokens.dim(1), dim = tokens.dim(2);
  if (p.heads < 1 || dim % p.heads != 0) {
    throw DimensionError("multi_head_attention: dimension " + std::to_string(dim) +
                         " is not divisible by " + std::to_string(p.heads) + " heads");
  }
  if (count != p.window * p.window) {
    throw DimensionError("multi_head_attention: " + std::to_string(count) +
                         " tokens per window, expected " + std::to_string(p.window * p.window));
  }
  const Index heads = p.heads, dk = dim / heads;

  Tensor<T> qkv = linear(tokens, p.qkv_weight, p.qkv_bias);
  Tensor<T> q = gather(qkv, Shape{wins, heads, count, dk},
                       head_split_index(kQuery, wins, count, dim, heads, 0, false));
  Tensor<T> kt = gather(qkv, Shape{wins, heads, dk, count},
                        head_split_index(kKeyT, wins, count, dim, heads, 1, true));
  Tensor<T> v = gather(qkv, Shape{wins, heads, count, dk},
                       head_split_index(kValue, wins, count, dim, heads, 2, false));

  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor<T> scores = matmul(scale(q, inv_sqrt_dk), kt);
  scores = add(scores, relative_position_bias(p.window, p.bias_table, heads));
  Tensor<T> attn = softmax(scores, -1);
  Tensor<T> heads_out = matmul(attn, v);  // [nWin, heads, T, dk]

  auto merge = detail::cached_index({kMerge, wins, count, dim, heads}, [=] {
    std::vector<Index> idx(static_cast<std::size_t>(wins * count * dim));
    Index o = 0;
    for (Index w = 0; w < wins; ++w)
      for (Index t = 0; t < count; ++t)
        for (Index h = 0; h < heads; ++h)
          for (Index e = 0; e < dk; ++e) idx[o++] = ((w * heads + h) * count + t) * dk + e;
    return idx;
  });
  Tensor<T> concat = gather(heads_out, Shape{wins, count, dim}, merge);
  return linear(concat, p.proj_weight, p.proj_bias);
}

WmsaComplexity wmsa_complexity(std::uint64_t h, std::uint64_t w, std::uint64_t channels,
                               std::uint64_t window) {
  const std::uint64_t hw = h * w;
  const std::uint64_t projections = 4 * hw * channels * channels;
  return {projections + 2 * window * window * hw * channels, projections + 2 * hw * hw * channels};
}

#define DRT_INSTANTIATE(T)                                                                    \
  template std::pair<Tensor<T>, WindowLayout> pad_to_window_multiple(const Tensor<T>&, Index); \
  template Tensor<T> window_partition(const Tensor<T>&, Index);                               \
  template Tensor<T> window_reverse(const Tensor<T>&, const WindowLayout&);                   \
  template Tensor<T> relative_position_bias(Index, const Tensor<T>&, Index);                  \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const AttentionParams<T>&);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt
