#include "relate/adversary.hpp"

#include <stdexcept>

#include "relate/nn.hpp"

namespace relate {
namespace {

constexpr double kNormEps = 1e-12;

torch::Tensor normalized(const torch::Tensor& v) { return v / v.norm().clamp_min(kNormEps); }

}  // namespace

SpectralWeightImpl::SpectralWeightImpl(std::vector<std::int64_t> shape) {
  weight = register_parameter("weight", torch::zeros(shape));
  auto u = torch::zeros({shape.front()});
  u.index_put_({0}, 1.0);
  spectral_u = register_buffer("spectral_u", u);
}

torch::Tensor SpectralWeightImpl::forward() const {
  const auto mat = weight.reshape({weight.size(0), -1});
  torch::Tensor u;
  torch::Tensor v;
  {
    torch::NoGradGuard guard;
    u = spectral_u.to(weight.scalar_type());
    v = normalized(torch::mv(mat.t(), u));
    if (is_training()) {
      u = normalized(torch::mv(mat, v));
      spectral_u.copy_(u);
    }
  }
  const auto sigma = torch::dot(u, torch::mv(mat, v));
  return weight / sigma;
}

torch::Tensor SpectralWeightImpl::sigma() const {
  torch::NoGradGuard guard;
  const auto mat = weight.reshape({weight.size(0), -1});
  const auto u = spectral_u.to(weight.scalar_type());
  const auto v = normalized(torch::mv(mat.t(), u));
  return torch::dot(u, torch::mv(mat, v));
}

SNConv2dImpl::SNConv2dImpl(std::int64_t in, std::int64_t out, int kernel, int stride, int padding)
    : stride(stride), padding(padding) {
  weight = register_module("weight", SpectralWeight(std::vector<std::int64_t>{out, in, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) const {
  return torch::conv2d(x, weight->forward(), bias, stride, padding);
}

SNLinearImpl::SNLinearImpl(std::int64_t in, std::int64_t out) {
  weight = register_module("weight", SpectralWeight(std::vector<std::int64_t>{out, in}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor SNLinearImpl::forward(const torch::Tensor& x) const {
  return torch::nn::functional::linear(x, weight->forward(), bias);
}

SNInstanceNormImpl::SNInstanceNormImpl(std::int64_t channels) {
  weight = register_module("weight", SpectralWeight(std::vector<std::int64_t>{channels, 1}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor SNInstanceNormImpl::forward(const torch::Tensor& x) const {
  const auto C = x.size(1);
  const auto w = weight->forward().reshape({1, C, 1, 1});
  const auto mean = x.mean({2, 3}, true);
  const auto var = (x - mean).pow(2).mean({2, 3}, true);
  return w * (x - mean) / torch::sqrt(var + 1e-5) + bias.reshape({1, C, 1, 1});
}

std::pair<torch::Tensor, torch::Tensor> layer_style_stats(const torch::Tensor& phi) {
  if (phi.dim() != 4) throw std::invalid_argument("layer_style_stats: features must be [N, C, h, w]");
  const auto mean = phi.mean({2, 3});
  const auto var = (phi - mean.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3});
  return {mean, var};
}

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& cfg)
    : input_channels(cfg.discriminator_input_channels()), image_side(cfg.image_side) {
  cfg.validate();
  const auto& ch = cfg.discriminator_channels;
  const int stride_one = cfg.discriminator_stride_one_layers();
  auto stride_of = [&](int layer) { return layer < stride_one ? 1 : 2; };
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(input_channels, ch[0], 5)
                                                         .stride(stride_of(0))
                                                         .padding(2)));
  for (int l = 1; l < 5; ++l) {
    const auto n = std::to_string(l + 1);
    convs.push_back(register_module("conv" + n, SNConv2d(ch[static_cast<std::size_t>(l - 1)],
                                                         ch[static_cast<std::size_t>(l)], 5, stride_of(l), 2)));
    norms.push_back(register_module("norm" + n, SNInstanceNorm(ch[static_cast<std::size_t>(l)])));
    style_heads.push_back(
        register_module("style" + n, torch::nn::Linear(2 * ch[static_cast<std::size_t>(l)], 1)));
  }
  const std::int64_t flat = ch[4] * 4 * 4;
  disc_head = register_module("disc_head", SNLinear(flat, 1));
  pos_head = register_module("pos_head", SNLinear(flat, 2));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != input_channels)
    throw std::invalid_argument("discriminator expects " + std::to_string(input_channels) + " input channels, got " +
                                (x.dim() == 4 ? std::to_string(x.size(1)) : "a non-image tensor"));
  if (x.size(2) != image_side || x.size(3) != image_side)
    throw std::invalid_argument("discriminator expects " + std::to_string(image_side) + "-pixel images");
  DiscriminatorOutput out;
  auto h = torch::leaky_relu(conv1.ptr()->forward(x), kLeakySlope);
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const auto phi = convs[l]->forward(h);
    const auto normed = norms[l]->forward(phi);
    const auto [mean, var] = layer_style_stats(phi);
    out.style_probs.push_back(torch::sigmoid(style_heads[l].ptr()->forward(torch::cat({mean, var}, 1))).squeeze(1));
    out.features.push_back(phi);
    out.normalized.push_back(normed);
    h = torch::leaky_relu(normed, kLeakySlope);
  }
  const auto flat = h.flatten(1);
  out.prob = torch::sigmoid(disc_head->forward(flat)).squeeze(1);
  out.pose = torch::tanh(pos_head->forward(flat));
  return out;
}

torch::Tensor discriminate(const torch::Tensor& x, const Discriminator& d) { return d->forward(x).prob; }

std::vector<torch::Tensor> style_discriminate(const torch::Tensor& x, const Discriminator& d) {
  return d->forward(x).style_probs;
}

torch::Tensor regress_position(const torch::Tensor& x, const Discriminator& d) { return d->forward(x).pose; }

}  // namespace relate
