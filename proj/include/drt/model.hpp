#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drt/blocks.hpp"
#include "drt/tensor.hpp"

namespace drt {

/// Architecture hyperparameters. Defaults are the reference deraining model.
struct ModelConfig {
  std::int64_t rtb_count = 6;       // N
  std::int64_t recursions = 3;      // L
  std::int64_t blocks_per_rtb = 2;  // U
  std::int64_t embed_dim = 96;      // D
  std::int64_t heads = 2;
  std::int64_t window = 7;          // M
  std::int64_t patch = 1;           // P
  double mlp_ratio = 1.0;
  std::int64_t kernel = 3;
  std::int64_t channels = 3;
  std::int64_t tail_convs = 1;
  double leaky_slope = 0.2;
  RecursionInput recursion_input = RecursionInput::Previous;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  StbShape stb_shape() const { return {embed_dim, window, heads, mlp_ratio}; }
  RtbOptions rtb_options() const;
  std::int64_t stem_kernel() const { return patch == 1 ? kernel : patch; }

  bool operator==(const ModelConfig&) const = default;
};

/// The full learnable state. Each RTB owns its blocks; nothing is shared
/// between RTBs, and recursion reuses an RTB's blocks by construction.
template <typename T>
struct DrtParameters {
  ConvParams<T> embed;
  std::vector<RtbParams<T>> rtbs;
  ConvParams<T> reconstruct;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Every learnable tensor in a fixed order. Handles alias `params`.
template <typename T>
std::vector<NamedTensor<T>> named_parameters(const DrtParameters<T>& params);

/// Allocates zero-filled parameters with the shapes implied by `config`.
template <typename T>
DrtParameters<T> zero_params(const ModelConfig& config);

/// Truncated normal (std 0.02, cut at two std) weights, zero biases and
/// position tables, unit norm scales. Fully determined by `seed`.
template <typename T>
DrtParameters<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Deep copy into independent leaves of element type U.
template <typename U, typename T>
DrtParameters<U> convert_params(const DrtParameters<T>& params);

/// img [B, C, H, W] -> embedding [B, H/P, W/P, D].
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const DrtParameters<T>& params, const ModelConfig& config);

/// N RTBs in sequence plus one residual from the stage input.
template <typename T>
Tensor<T> deep_features(const Tensor<T>& embedding, const DrtParameters<T>& params,
                        const ModelConfig& config);

/// Channel-first restore, conv D -> C (after P-fold upsampling when P > 1),
/// then the global residual from the network input.
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& deep, const Tensor<T>& input, const DrtParameters<T>& params,
                      const ModelConfig& config);

/// img [B, C, H, W] -> derained [B, C, H, W]. Also accepts [C, H, W].
template <typename T>
Tensor<T> forward(const Tensor<T>& img, const DrtParameters<T>& params, const ModelConfig& config);

}  // namespace drt
