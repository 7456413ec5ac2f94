#include "drt/blocks.hpp"

#include "drt/errors.hpp"
#include "drt/ops.hpp"

namespace drt {

template <typename T>
Tensor<T> stb_forward(const Tensor<T>& tokens, const StbParams<T>& p) {
  if (tokens.rank() != 3 || tokens.dim(2) != p.norm1_gamma.numel()) {
    throw DimensionError("stb_forward: tokens " + shape_to_string(tokens.shape()) +
                         " do not match block width " + std::to_string(p.norm1_gamma.numel()));
  }
  Tensor<T> attended = add(multi_head_attention(layer_norm(tokens, p.norm1_gamma, p.norm1_beta), p.attention),
                           tokens);
  Tensor<T> hidden = gelu(linear(layer_norm(attended, p.norm2_gamma, p.norm2_beta),
                                 p.mlp_hidden_weight, p.mlp_hidden_bias));
  return add(linear(hidden, p.mlp_out_weight, p.mlp_out_bias), attended);
}

template <typename T>
Tensor<T> apply_tail(const Tensor<T>& map, const std::vector<ConvParams<T>>& tail,
                     double leaky_slope) {
  Tensor<T> x = permute(map, {0, 3, 1, 2});
  for (std::size_t i = 0; i < tail.size(); ++i) {
    const int pad = static_cast<int>(tail[i].weight.dim(2) / 2);
    x = conv2d(x, tail[i].weight, tail[i].bias, 1, pad);
    // Activations only separate convs; a single conv is purely linear.
    if (i + 1 < tail.size()) x = leaky_relu(x, static_cast<T>(leaky_slope));
  }
  return permute(x, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> rtb_forward(const Tensor<T>& s_in, const RtbParams<T>& p, const RtbOptions& options) {
  if (options.recursions < 1) throw UsageError("rtb_forward: recursion count must be >= 1");
  if (p.blocks.empty()) throw UsageError("rtb_forward: RTB has no transformer blocks");
  if (s_in.rank() != 4) throw DimensionError("rtb_forward: expected [B, H, W, D], got " + shape_to_string(s_in.shape()));
  const Index window = p.blocks.front().attention.window;

  Tensor<T> y = s_in;
  for (int j = 0; j < options.recursions; ++j) {
    const Tensor<T>& chain_in = options.recursion_input == RecursionInput::Previous ? y : s_in;
    auto [padded, layout] = pad_to_window_multiple(chain_in, window);
    Tensor<T> z = window_partition(padded, window);
    for (const auto& block : p.blocks) z = stb_forward(z, block);
    y = add(window_reverse(z, layout), s_in);
  }
  return apply_tail(y, p.tail, options.leaky_slope);
}

std::int64_t count_stb_params(const StbShape& s) {
  const std::int64_t d = s.dim, h = s.hidden(), span = 2 * s.window - 1;
  const std::int64_t norms = 2 * 2 * d;
  const std::int64_t qkv = d * 3 * d + 3 * d;
  const std::int64_t proj = d * d + d;
  const std::int64_t table = span * span * s.heads;
  const std::int64_t mlp = (d * h + h) + (h * d + d);
  return norms + qkv + proj + table + mlp;
}

std::int64_t count_rtb_params(std::int64_t blocks, const StbShape& shape, std::int64_t kernel,
                              std::int64_t tail_convs) {
  const std::int64_t d = shape.dim;
  return blocks * count_stb_params(shape) + tail_convs * (d * d * kernel * kernel + d);
}

#define DRT_INSTANTIATE(T)                                                                   \
  template Tensor<T> stb_forward(const Tensor<T>&, const StbParams<T>&);                     \
  template Tensor<T> apply_tail(const Tensor<T>&, const std::vector<ConvParams<T>>&, double); \
  template Tensor<T> rtb_forward(const Tensor<T>&, const RtbParams<T>&, const RtbOptions&);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

}  // namespace drt
