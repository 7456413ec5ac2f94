#pragma once

#include <cstdint>
#include <vector>

#include "drt/tensor.hpp"
#include "drt/window_attention.hpp"

namespace drt {

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // [C_out, C_in, k, k]
  Tensor<T> bias;    // [C_out]
};

/// One Swin transformer block: pre-norm windowed attention and a pre-norm
/// GELU MLP, each wrapped in a residual.
template <typename T>
struct StbParams {
  Tensor<T> norm1_gamma, norm1_beta;
  AttentionParams<T> attention;
  Tensor<T> norm2_gamma, norm2_beta;
  Tensor<T> mlp_hidden_weight, mlp_hidden_bias;  // [D, rD], [rD]
  Tensor<T> mlp_out_weight, mlp_out_bias;        // [rD, D], [D]
};

/// U distinct STBs reused by every recursion, followed by the conv tail.
template <typename T>
struct RtbParams {
  std::vector<StbParams<T>> blocks;
  std::vector<ConvParams<T>> tail;
};

/// What the STB chain consumes at recursion j.
enum class RecursionInput {
  Previous,  // y_{j-1}, the output of the previous recursion
  Anchor,    // s_in every time
};

struct RtbOptions {
  int recursions = 3;
  double leaky_slope = 0.2;  // only used between multiple tail convs
  RecursionInput recursion_input = RecursionInput::Previous;
};

/// tokens [nWin, M*M, D] -> same shape.
template <typename T>
Tensor<T> stb_forward(const Tensor<T>& tokens, const StbParams<T>& p);

/// s_in [B, H, W, D] -> same shape. Each recursion runs the whole STB chain
/// and adds s_in back; the tail convs see the final recursion's map.
template <typename T>
Tensor<T> rtb_forward(const Tensor<T>& s_in, const RtbParams<T>& p, const RtbOptions& options);

/// Runs the conv tail on a [B, H, W, D] map and returns the same layout.
template <typename T>
Tensor<T> apply_tail(const Tensor<T>& map, const std::vector<ConvParams<T>>& tail,
                     double leaky_slope);

struct StbShape {
  std::int64_t dim = 96;
  std::int64_t window = 7;
  std::int64_t heads = 2;
  double mlp_ratio = 1.0;

  std::int64_t hidden() const { return static_cast<std::int64_t>(static_cast<double>(dim) * mlp_ratio); }
};

std::int64_t count_stb_params(const StbShape& shape);

/// Learnable scalars in one RTB. Independent of the recursion count.
std::int64_t count_rtb_params(std::int64_t blocks, const StbShape& shape, std::int64_t kernel,
                              std::int64_t tail_convs = 1);

}  // namespace drt
