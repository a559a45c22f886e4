#pragma once

#include <torch/torch.h>

#include <utility>
#include <vector>

#include "relate/config.hpp"

namespace relate {

/// Spectrally normalized weight: W / sigma(W), with sigma estimated by one
/// power-iteration step per training-mode call on a persistent vector u.
/// Eval-mode calls reuse u without updating it.
struct SpectralWeightImpl : torch::nn::Module {
  explicit SpectralWeightImpl(std::vector<std::int64_t> shape);

  torch::Tensor forward() const;
  /// sigma estimate for the current u, without updating it.
  torch::Tensor sigma() const;

  torch::Tensor weight;
  torch::Tensor spectral_u;  // [rows]
};
TORCH_MODULE(SpectralWeight);

struct SNConv2dImpl : torch::nn::Module {
  SNConv2dImpl(std::int64_t in, std::int64_t out, int kernel, int stride, int padding);
  torch::Tensor forward(const torch::Tensor& x) const;

  SpectralWeight weight{nullptr};
  torch::Tensor bias;
  int stride;
  int padding;
};
TORCH_MODULE(SNConv2d);

struct SNLinearImpl : torch::nn::Module {
  SNLinearImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x) const;

  SpectralWeight weight{nullptr};
  torch::Tensor bias;
};
TORCH_MODULE(SNLinear);

/// Instance normalization whose per-channel affine weight is itself
/// spectrally normalized (as a C x 1 matrix).
struct SNInstanceNormImpl : torch::nn::Module {
  explicit SNInstanceNormImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x) const;

  SpectralWeight weight{nullptr};
  torch::Tensor bias;
};
TORCH_MODULE(SNInstanceNorm);

/// Per-channel spatial mean and biased variance of [N, C, h, w] features,
/// each [N, C].
std::pair<torch::Tensor, torch::Tensor> layer_style_stats(const torch::Tensor& phi);

struct DiscriminatorOutput {
  torch::Tensor prob;                      // [N] in (0, 1)
  torch::Tensor pose;                      // [N, 2] in [-1, 1]
  std::vector<torch::Tensor> style_probs;  // one [N] per monitored layer
  std::vector<torch::Tensor> features;     // pre-normalization Phi_l, layers 2..5
  std::vector<torch::Tensor> normalized;   // the same layers after instance normalization
};

/// Shared convolutional backbone with the real/fake head, the position
/// regressor P and per-layer style discriminators D_l.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(const ModelConfig& cfg);

  DiscriminatorOutput forward(const torch::Tensor& x) const;

  torch::nn::Conv2d conv1{nullptr};
  std::vector<SNConv2d> convs;            // layers 2..5
  std::vector<SNInstanceNorm> norms;      // layers 2..5
  SNLinear disc_head{nullptr};
  SNLinear pos_head{nullptr};
  std::vector<torch::nn::Linear> style_heads;
  std::int64_t input_channels;
  std::int64_t image_side;
};
TORCH_MODULE(Discriminator);

torch::Tensor discriminate(const torch::Tensor& x, const Discriminator& d);                     // [N]
std::vector<torch::Tensor> style_discriminate(const torch::Tensor& x, const Discriminator& d);  // 4 x [N]
torch::Tensor regress_position(const torch::Tensor& x, const Discriminator& d);                 // [N, 2]

}  // namespace relate
