#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "drt/tensor.hpp"

namespace drt {

/// Geometry of an M x M window tiling over an H x W map, including the
/// bottom/right padding needed to reach whole windows.
struct WindowLayout {
  Index height = 0;
  Index width = 0;
  Index padded_height = 0;
  Index padded_width = 0;
  Index window = 0;
  Index pad_bottom = 0;
  Index pad_right = 0;

  Index windows_down() const { return padded_height / window; }
  Index windows_across() const { return padded_width / window; }
  Index window_count() const { return windows_down() * windows_across(); }
  Index tokens_per_window() const { return window * window; }
};

WindowLayout make_window_layout(Index height, Index width, Index window);

/// Mirror index for reflect padding; lengths of one replicate. Offsets beyond
/// one reflection fold back periodically.
Index reflect_index(Index i, Index length);

/// Reflect-pads x [B, H, W, D] on the bottom and right edges to multiples of M.
template <typename T>
std::pair<Tensor<T>, WindowLayout> pad_to_window_multiple(const Tensor<T>& x, Index window);

/// [B, H', W', D] -> [B * nW, M*M, D]. Windows are row-major over the map,
/// tokens row-major within a window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, Index window);

/// Inverse of pad + partition: [B * nW, M*M, D] -> [B, H, W, D] with the
/// original (unpadded) extents.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout);

/// Parameters of one windowed multi-head self-attention layer. The query, key
/// and value projections are fused into a single D -> 3D map laid out as
/// [Q | K | V], each split into `heads` contiguous slices of width D / heads.
template <typename T>
struct AttentionParams {
  Tensor<T> qkv_weight;  // [D, 3D]
  Tensor<T> qkv_bias;    // [3D]
  Tensor<T> proj_weight; // [D, D]
  Tensor<T> proj_bias;   // [D]
  Tensor<T> bias_table;  // [(2M-1)^2, heads]
  Index heads = 1;
  Index window = 1;

  Index dim() const { return proj_weight.dim(0); }
};

/// Table row for each (query, key) token pair in an M x M window:
/// (drow + M - 1) * (2M - 1) + (dcol + M - 1), with d = coords(i) - coords(j).
std::vector<Index> relative_position_index(Index window);

/// Expands the learned table into a dense [heads, M*M, M*M] bias.
template <typename T>
Tensor<T> relative_position_bias(Index window, const Tensor<T>& table, Index heads);

/// Softmax(Q K^T / sqrt(d_k) + B) V per head, heads concatenated then
/// projected by W^O. tokens: [nWin, M*M, D].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& tokens, const AttentionParams<T>& p);

struct WmsaComplexity {
  std::uint64_t windowed = 0;
  std::uint64_t global = 0;
};

/// Closed-form attention cost for a C x h x w map: global 4hwC^2 + 2(hw)^2 C
/// and windowed 4hwC^2 + 2 M^2 hw C.
WmsaComplexity wmsa_complexity(std::uint64_t h, std::uint64_t w, std::uint64_t channels,
                               std::uint64_t window);

}  // namespace drt
