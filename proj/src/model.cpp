#include "drt/model.hpp"

#include <random>
#include <stdexcept>
#include <string>

#include "drt/errors.hpp"
#include "drt/ops.hpp"
#include "index_cache.hpp"

namespace drt {

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid model config: ") + what);
  };
  require(rtb_count >= 1, "rtb_count must be >= 1");
  require(recursions >= 1, "recursions must be >= 1");
  require(blocks_per_rtb >= 1, "blocks_per_rtb must be >= 1");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(embed_dim % heads == 0, "embed_dim must be divisible by heads");
  require(window >= 1, "window must be >= 1");
  require(patch >= 1, "patch must be >= 1");
  require(mlp_ratio > 0.0 && stb_shape().hidden() >= 1, "mlp_ratio must give a hidden width >= 1");
  require(kernel >= 1 && kernel % 2 == 1, "kernel must be odd and >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(tail_convs >= 1, "tail_convs must be >= 1");
}

RtbOptions ModelConfig::rtb_options() const {
  RtbOptions o;
  o.recursions = static_cast<int>(recursions);
  o.leaky_slope = leaky_slope;
  o.recursion_input = recursion_input;
  return o;
}

namespace {

template <typename T>
Tensor<T> param(const Shape& shape) {
  return Tensor<T>::zeros(shape, true);
}

template <typename T>
ConvParams<T> conv_param(Index cout, Index cin, Index k) {
  return {param<T>({cout, cin, k, k}), param<T>({cout})};
}

template <typename T>
void append_conv(std::vector<NamedTensor<T>>& out, const std::string& prefix, const ConvParams<T>& c) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bias", c.bias});
}

template <typename U, typename T>
Tensor<U> convert_tensor(const Tensor<T>& t) {
  std::vector<U> values(t.data().begin(), t.data().end());
  return Tensor<U>(t.shape(), std::move(values), true);
}

template <typename U, typename T>
ConvParams<U> convert_conv(const ConvParams<T>& c) {
  return {convert_tensor<U>(c.weight), convert_tensor<U>(c.bias)};
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> named_parameters(const DrtParameters<T>& params) {
  std::vector<NamedTensor<T>> out;
  append_conv(out, "embed", params.embed);
  for (std::size_t r = 0; r < params.rtbs.size(); ++r) {
    const std::string rp = "rtb." + std::to_string(r);
    const auto& rtb = params.rtbs[r];
    for (std::size_t b = 0; b < rtb.blocks.size(); ++b) {
      const std::string bp = rp + ".stb." + std::to_string(b);
      const auto& s = rtb.blocks[b];
      out.push_back({bp + ".norm1.gamma", s.norm1_gamma});
      out.push_back({bp + ".norm1.beta", s.norm1_beta});
      out.push_back({bp + ".attn.qkv.weight", s.attention.qkv_weight});
      out.push_back({bp + ".attn.qkv.bias", s.attention.qkv_bias});
      out.push_back({bp + ".attn.proj.weight", s.attention.proj_weight});
      out.push_back({bp + ".attn.proj.bias", s.attention.proj_bias});
      out.push_back({bp + ".attn.position_table", s.attention.bias_table});
      out.push_back({bp + ".norm2.gamma", s.norm2_gamma});
      out.push_back({bp + ".norm2.beta", s.norm2_beta});
      out.push_back({bp + ".mlp.hidden.weight", s.mlp_hidden_weight});
      out.push_back({bp + ".mlp.hidden.bias", s.mlp_hidden_bias});
      out.push_back({bp + ".mlp.out.weight", s.mlp_out_weight});
      out.push_back({bp + ".mlp.out.bias", s.mlp_out_bias});
    }
    for (std::size_t t = 0; t < rtb.tail.size(); ++t) append_conv(out, rp + ".tail." + std::to_string(t), rtb.tail[t]);
  }
  append_conv(out, "reconstruct", params.reconstruct);
  return out;
}

template <typename T>
DrtParameters<T> zero_params(const ModelConfig& config) {
  config.validate();
  const Index d = config.embed_dim, c = config.channels, k = config.kernel;
  const Index hidden = config.stb_shape().hidden();
  const Index span = 2 * config.window - 1;
  DrtParameters<T> p;
  p.embed = conv_param<T>(d, c, config.stem_kernel());
  p.rtbs.resize(static_cast<std::size_t>(config.rtb_count));
  for (auto& rtb : p.rtbs) {
    rtb.blocks.resize(static_cast<std::size_t>(config.blocks_per_rtb));
    for (auto& s : rtb.blocks) {
      s.norm1_gamma = param<T>({d});
      s.norm1_beta = param<T>({d});
      s.attention.qkv_weight = param<T>({d, 3 * d});
      s.attention.qkv_bias = param<T>({3 * d});
      s.attention.proj_weight = param<T>({d, d});
      s.attention.proj_bias = param<T>({d});
      s.attention.bias_table = param<T>({span * span, config.heads});
      s.attention.heads = config.heads;
      s.attention.window = config.window;
      s.norm2_gamma = param<T>({d});
      s.norm2_beta = param<T>({d});
      s.mlp_hidden_weight = param<T>({d, hidden});
      s.mlp_hidden_bias = param<T>({hidden});
      s.mlp_out_weight = param<T>({hidden, d});
      s.mlp_out_bias = param<T>({d});
    }
    for (Index t = 0; t < config.tail_convs; ++t) rtb.tail.push_back(conv_param<T>(d, d, k));
  }
  p.reconstruct = conv_param<T>(c, d, k);
  return p;
}

template <typename T>
DrtParameters<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  DrtParameters<T> p = zero_params<T>(config);
  std::mt19937_64 rng(seed);
  constexpr double kStd = 0.02;
  std::normal_distribution<double> normal(0.0, kStd);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, tensor] : named_parameters(p)) {
    auto values = tensor.mutable_data();
    if (ends_with(name, ".weight")) {
      for (auto& v : values) {
        double sample = normal(rng);
        while (std::abs(sample) > 2.0 * kStd) sample = normal(rng);
        v = static_cast<T>(sample);
      }
    } else if (ends_with(name, ".gamma")) {
      std::fill(values.begin(), values.end(), T(1));
    }
  }
  return p;
}

template <typename U, typename T>
DrtParameters<U> convert_params(const DrtParameters<T>& params) {
  DrtParameters<U> out;
  out.embed = convert_conv<U>(params.embed);
  out.reconstruct = convert_conv<U>(params.reconstruct);
  for (const auto& rtb : params.rtbs) {
    RtbParams<U> r;
    for (const auto& s : rtb.blocks) {
      StbParams<U> b;
      b.norm1_gamma = convert_tensor<U>(s.norm1_gamma);
      b.norm1_beta = convert_tensor<U>(s.norm1_beta);
      b.attention.qkv_weight = convert_tensor<U>(s.attention.qkv_weight);
      b.attention.qkv_bias = convert_tensor<U>(s.attention.qkv_bias);
      b.attention.proj_weight = convert_tensor<U>(s.attention.proj_weight);
      b.attention.proj_bias = convert_tensor<U>(s.attention.proj_bias);
      b.attention.bias_table = convert_tensor<U>(s.attention.bias_table);
      b.attention.heads = s.attention.heads;
      b.attention.window = s.attention.window;
      b.norm2_gamma = convert_tensor<U>(s.norm2_gamma);
      b.norm2_beta = convert_tensor<U>(s.norm2_beta);
      b.mlp_hidden_weight = convert_tensor<U>(s.mlp_hidden_weight);
      b.mlp_hidden_bias = convert_tensor<U>(s.mlp_hidden_bias);
      b.mlp_out_weight = convert_tensor<U>(s.mlp_out_weight);
      b.mlp_out_bias = convert_tensor<U>(s.mlp_out_bias);
      r.blocks.push_back(std::move(b));
    }
    for (const auto& c : rtb.tail) r.tail.push_back(convert_conv<U>(c));
    out.rtbs.push_back(std::move(r));
  }
  return out;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const DrtParameters<T>& params, const ModelConfig& config) {
  if (img.rank() != 4 || img.dim(1) != config.channels) {
    throw DimensionError("patch_embed: expected [B, " + std::to_string(config.channels) +
                         ", H, W], got " + shape_to_string(img.shape()));
  }
  const Index p = config.patch;
  if (p > 1 && (img.dim(2) % p != 0 || img.dim(3) % p != 0)) {
    throw DimensionError("patch_embed: extents " + shape_to_string(img.shape()) +
                         " are not divisible by patch size " + std::to_string(p));
  }
  const int pad = p == 1 ? static_cast<int>(config.kernel / 2) : 0;
  Tensor<T> conv = conv2d(img, params.embed.weight, params.embed.bias, static_cast<int>(p), pad);
  return permute(conv, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> deep_features(const Tensor<T>& embedding, const DrtParameters<T>& params,
                        const ModelConfig& config) {
  const RtbOptions options = config.rtb_options();
  Tensor<T> x = embedding;
  for (const auto& rtb : params.rtbs) x = rtb_forward(x, rtb, options);
  return add(x, embedding);
}

namespace {

// Nearest-neighbour P-fold upsample of [B, D, h, w].
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, Index factor) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  auto index = detail::cached_index({100, b, c, h, w, factor}, [&] {
    std::vector<Index> idx(static_cast<std::size_t>(b * c * oh * ow));
    Index o = 0;
    for (Index n = 0; n < b * c; ++n)
      for (Index r = 0; r < oh; ++r)
        for (Index col = 0; col < ow; ++col) idx[o++] = (n * h + r / factor) * w + col / factor;
    return idx;
  });
  return gather(x, Shape{b, c, oh, ow}, index);
}

}  // namespace

template <typename T>
Tensor<T> reconstruct(const Tensor<T>& deep, const Tensor<T>& input, const DrtParameters<T>& params,
                      const ModelConfig& config) {
  Tensor<T> x = permute(deep, {0, 3, 1, 2});
  if (config.patch > 1) x = upsample_nearest(x, config.patch);
  x = conv2d(x, params.reconstruct.weight, params.reconstruct.bias, 1, static_cast<int>(config.kernel / 2));
  return add(x, input);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& img, const DrtParameters<T>& params, const ModelConfig& config) {
  if (img.rank() == 3) {
    Tensor<T> batched = reshape(img, Shape{1, img.dim(0), img.dim(1), img.dim(2)});
    return reshape(forward(batched, params, config), img.shape());
  }
  Tensor<T> embedding = patch_embed(img, params, config);
  Tensor<T> deep = deep_features(embedding, params, config);
  return reconstruct(deep, img, params, config);
}

#define DRT_INSTANTIATE(T)                                                                              \
  template std::vector<NamedTensor<T>> named_parameters(const DrtParameters<T>&);                       \
  template DrtParameters<T> zero_params<T>(const ModelConfig&);                                         \
  template DrtParameters<T> init_params<T>(const ModelConfig&, std::uint64_t);                          \
  template Tensor<T> patch_embed(const Tensor<T>&, const DrtParameters<T>&, const ModelConfig&);        \
  template Tensor<T> deep_features(const Tensor<T>&, const DrtParameters<T>&, const ModelConfig&);      \
  template Tensor<T> reconstruct(const Tensor<T>&, const Tensor<T>&, const DrtParameters<T>&,           \
                                 const ModelConfig&);                                                   \
  template Tensor<T> forward(const Tensor<T>&, const DrtParameters<T>&, const ModelConfig&);
DRT_INSTANTIATE(float)
DRT_INSTANTIATE(double)
#undef DRT_INSTANTIATE

template DrtParameters<float> convert_params<float, float>(const DrtParameters<float>&);
template DrtParameters<float> convert_params<float, double>(const DrtParameters<double>&);
template DrtParameters<double> convert_params<double, float>(const DrtParameters<float>&);
template DrtParameters<double> convert_params<double, double>(const DrtParameters<double>&);

}  // namespace drt
