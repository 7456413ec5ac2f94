#include "drt/accounting.hpp"

#include "drt/window_attention.hpp"

namespace drt {

std::int64_t count_params(const ModelConfig& config) {
  config.validate();
  const std::int64_t d = config.embed_dim, c = config.channels, k = config.kernel;
  const std::int64_t sk = config.stem_kernel();
  const std::int64_t embed = c * d * sk * sk + d;
  const std::int64_t head = d * c * k * k + c;
  const std::int64_t rtb = count_rtb_params(config.blocks_per_rtb, config.stb_shape(), k, config.tail_convs);
  return embed + config.rtb_count * rtb + head;
}

std::uint64_t conv_macs(std::uint64_t kernel, std::uint64_t in_channels, std::uint64_t out_channels,
                        std::uint64_t out_height, std::uint64_t out_width) {
  return kernel * kernel * in_channels * out_channels * out_height * out_width;
}

std::uint64_t MacReport::total() const {
  std::uint64_t t = 0;
  for (const auto& item : items) t += item.macs;
  return t;
}

MacReport count_macs(const ModelConfig& config, std::int64_t height, std::int64_t width) {
  config.validate();
  using u64 = std::uint64_t;
  const u64 d = static_cast<u64>(config.embed_dim);
  const u64 c = static_cast<u64>(config.channels);
  const u64 k = static_cast<u64>(config.kernel);
  const u64 heads = static_cast<u64>(config.heads);
  const u64 dk = d / heads;
  const u64 hidden = static_cast<u64>(config.stb_shape().hidden());
  const u64 fh = static_cast<u64>(height / config.patch);
  const u64 fw = static_cast<u64>(width / config.patch);
  const WindowLayout layout = make_window_layout(static_cast<Index>(fh), static_cast<Index>(fw), config.window);
  const u64 tokens = static_cast<u64>(layout.padded_height * layout.padded_width);
  const u64 wins = static_cast<u64>(layout.window_count());
  const u64 t = static_cast<u64>(layout.tokens_per_window());
  const u64 passes = static_cast<u64>(config.rtb_count * config.recursions * config.blocks_per_rtb);
  const u64 n = static_cast<u64>(config.rtb_count);
  const u64 sk = static_cast<u64>(config.stem_kernel());

  MacReport r;
  r.height = height;
  r.width = width;
  r.items = {
      {"embed_conv", conv_macs(sk, c, d, fh, fw), "k^2*C*D*h*w"},
      {"attention_qkv", passes * tokens * d * 3 * d, "passes*tokens*D*3D"},
      {"attention_scores", passes * wins * heads * t * t * dk, "passes*windows*n*T^2*d_k"},
      {"attention_values", passes * wins * heads * t * t * dk, "passes*windows*n*T^2*d_k"},
      {"attention_proj", passes * tokens * d * d, "passes*tokens*D*D"},
      {"mlp", passes * tokens * 2 * d * hidden, "passes*tokens*2*D*rD"},
      {"tail_conv", n * static_cast<u64>(config.tail_convs) * conv_macs(k, d, d, fh, fw), "N*k^2*D*D*h*w"},
      {"reconstruct_conv", conv_macs(k, d, c, static_cast<u64>(height), static_cast<u64>(width)),
       "k^2*D*C*H*W"},
  };
  return r;
}

std::optional<double> published_params_m(const ModelConfig& config) {
  ModelConfig base;
  base.rtb_count = config.rtb_count;
  base.recursions = config.recursions;
  base.blocks_per_rtb = config.blocks_per_rtb;
  if (!(base == config)) return std::nullopt;
  struct Row {
    std::int64_t n, l, u;
    double millions;
  };
  static constexpr Row rows[] = {
      {6, 3, 2, 1.18}, {6, 1, 2, 1.18}, {6, 2, 2, 1.18}, {6, 4, 2, 1.18}, {3, 3, 2, 0.591},
      {9, 3, 2, 1.77}, {8, 2, 2, 1.57}, {6, 3, 1, 0.841}, {6, 3, 3, 1.52},
  };
  for (const Row& row : rows) {
    if (row.n == config.rtb_count && row.l == config.recursions && row.u == config.blocks_per_rtb) return row.millions;
  }
  return std::nullopt;
}

}  // namespace drt
