#include "relate/losses.hpp"

#include <stdexcept>

namespace relate {
namespace {

torch::Tensor clamp_prob(const torch::Tensor& p) { return p.clamp(kProbEps, 1.0 - kProbEps); }

}  // namespace

torch::Tensor generator_gan_loss(const torch::Tensor& d_fake, GeneratorLoss kind) {
  const auto f = clamp_prob(d_fake);
  return kind == GeneratorLoss::kSaturating ? torch::log(1.0 - f).mean() : (-torch::log(f)).mean();
}

AdversarialLoss loss_gan(const torch::Tensor& d_real, const torch::Tensor& d_fake, GeneratorLoss kind) {
  const auto r = clamp_prob(d_real);
  const auto f = clamp_prob(d_fake);
  return {-(torch::log(r).mean() + torch::log(1.0 - f).mean()), generator_gan_loss(d_fake, kind)};
}

AdversarialLoss loss_style(const std::vector<torch::Tensor>& real_probs, const std::vector<torch::Tensor>& fake_probs,
                           GeneratorLoss kind) {
  if (real_probs.size() != fake_probs.size()) throw std::invalid_argument("loss_style: layer count mismatch");
  if (real_probs.empty()) throw std::invalid_argument("loss_style: no monitored layers");
  auto d = loss_gan(real_probs[0], fake_probs[0], kind);
  for (std::size_t l = 1; l < real_probs.size(); ++l) {
    const auto layer = loss_gan(real_probs[l], fake_probs[l], kind);
    d.discriminator = d.discriminator + layer.discriminator;
    d.generator = d.generator + layer.generator;
  }
  return d;
}

torch::Tensor generator_style_loss(const std::vector<torch::Tensor>& fake_probs, GeneratorLoss kind) {
  if (fake_probs.empty()) throw std::invalid_argument("generator_style_loss: no monitored layers");
  auto total = generator_gan_loss(fake_probs[0], kind);
  for (std::size_t l = 1; l < fake_probs.size(); ++l) total = total + generator_gan_loss(fake_probs[l], kind);
  return total;
}

torch::Tensor loss_position(const torch::Tensor& target, const torch::Tensor& predicted) {
  if (target.sizes() != predicted.sizes()) throw std::invalid_argument("loss_position: shape mismatch");
  return (target.detach() - predicted).pow(2).sum(-1).mean();
}

}  // namespace relate
