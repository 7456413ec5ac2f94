#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drt/model.hpp"

namespace drt {

/// Exact number of learnable scalars for `config`, without instantiating it.
std::int64_t count_params(const ModelConfig& config);

std::uint64_t conv_macs(std::uint64_t kernel, std::uint64_t in_channels, std::uint64_t out_channels,
                        std::uint64_t out_height, std::uint64_t out_width);

struct MacItem {
  std::string name;
  std::uint64_t macs = 0;
  std::string rule;
};

/// Multiply-accumulate audit of one forward pass over a C x H x W image.
///
/// Convention: a conv costs k^2 * C_in * C_out per output pixel; a linear
/// costs D_in * D_out per token; attention costs n * T^2 * d_k for Q K^T and
/// again for A V per window. Window terms use the padded map. Every recursion
/// is counted. Normalization, softmax, activations and bias adds are not.
struct MacReport {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<MacItem> items;

  std::uint64_t total() const;
};

MacReport count_macs(const ModelConfig& config, std::int64_t height, std::int64_t width);

/// Reference MAC figure published for the default model at 3 x 336 x 336.
inline constexpr double kPublishedMacsG = 56.51;
/// Reference parameter count (millions) published for the default model.
inline constexpr double kPublishedParamsM = 1.18;

/// Published parameter count (millions) for the reference model and its
/// N/L/U ablation variants. Empty for any other configuration.
std::optional<double> published_params_m(const ModelConfig& config);

}  // namespace drt
