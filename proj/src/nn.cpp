#include "relate/nn.hpp"

#include <stdexcept>

namespace relate {

MlpImpl::MlpImpl(std::vector<std::int64_t> sizes, OutputActivation output)
    : sizes_(std::move(sizes)), output_(output) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  if (output_ == OutputActivation::kSigmoidXTanhY && sizes_.back() != 2)
    throw std::invalid_argument("sigmoid/tanh output split needs exactly 2 outputs");
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    layers.push_back(register_module("fc" + std::to_string(i + 1), torch::nn::Linear(sizes_[i], sizes_[i + 1])));
  }
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) const {
  torch::Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].ptr()->forward(h);
    if (i + 1 < layers.size()) h = torch::leaky_relu(h, kLeakySlope);
  }
  switch (output_) {
    case OutputActivation::kNone:
      return h;
    case OutputActivation::kTanh:
      return torch::tanh(h);
    case OutputActivation::kSigmoidXTanhY:
      return torch::stack({torch::sigmoid(h.select(-1, 0)), torch::tanh(h.select(-1, 1))}, -1);
  }
  return h;
}

void fill_normal(torch::Tensor& t, Rng& rng, double stddev) {
  const auto n = t.numel();
  std::vector<double> values(static_cast<std::size_t>(n));
  for (auto& v : values) v = rng.normal(0.0, stddev);
  auto src = torch::from_blob(values.data(), t.sizes(), torch::kFloat64).to(t.dtype());
  torch::NoGradGuard guard;
  t.copy_(src);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void init_weights(torch::nn::Module& module, Rng& rng, double stddev) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    if (ends_with(item.key(), "bias")) {
      p.zero_();
    } else {
      fill_normal(p, rng, stddev);
    }
  }
  for (auto& item : module.named_buffers(/*recurse=*/true)) {
    if (!ends_with(item.key(), "spectral_u")) continue;
    auto& u = item.value();
    fill_normal(u, rng, 1.0);
    u.div_(u.norm().clamp_min(1e-12));
  }
}

double parameter_checksum(const torch::nn::Module& module) {
  double sum = 0.0;
  for (const auto& p : module.parameters(true)) sum += p.to(torch::kFloat64).sum().item<double>();
  for (const auto& b : module.buffers(true)) sum += b.to(torch::kFloat64).sum().item<double>();
  return sum;
}

}  // namespace relate
