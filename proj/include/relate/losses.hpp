#pragma once

#include <torch/torch.h>

#include <vector>

#include "relate/config.hpp"

namespace relate {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEps = 1e-7;

struct AdversarialLoss {
  torch::Tensor discriminator;  // minimized by D: -[log D(real) + log(1 - D(fake))], batch mean
  torch::Tensor generator;      // minimized by the generator side
};

/// Generator term alone: log(1 - D(fake)) (saturating) or -log D(fake).
torch::Tensor generator_gan_loss(const torch::Tensor& d_fake, GeneratorLoss kind = GeneratorLoss::kSaturating);

AdversarialLoss loss_gan(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                         GeneratorLoss kind = GeneratorLoss::kSaturating);

/// Per-layer adversarial loss on style statistics, summed over layers.
AdversarialLoss loss_style(const std::vector<torch::Tensor>& real_probs, const std::vector<torch::Tensor>& fake_probs,
                           GeneratorLoss kind = GeneratorLoss::kSaturating);
torch::Tensor generator_style_loss(const std::vector<torch::Tensor>& fake_probs,
                                   GeneratorLoss kind = GeneratorLoss::kSaturating);

/// ||stopgrad(target) - predicted||^2 per sample, averaged over the batch.
/// target, predicted: [N, 2].
torch::Tensor loss_position(const torch::Tensor& target, const torch::Tensor& predicted);

}  // namespace relate
