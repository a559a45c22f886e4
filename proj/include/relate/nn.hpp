#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "relate/rng.hpp"

namespace relate {

/// Negative slope of every leaky ReLU in the model.
inline constexpr double kLeakySlope = 0.2;

enum class OutputActivation {
  kNone,
  kTanh,
  /// Two outputs: sigmoid on the first (x), tanh on the second (y).
  kSigmoidXTanhY,
};

/// Fully connected stack with leaky ReLU between layers, applied over the last
/// dimension of its input.
struct MlpImpl : torch::nn::Module {
  MlpImpl(std::vector<std::int64_t> sizes, OutputActivation output);

  torch::Tensor forward(const torch::Tensor& x) const;

  std::int64_t input_size() const { return sizes_.front(); }
  std::int64_t output_size() const { return sizes_.back(); }

  std::vector<torch::nn::Linear> layers;

 private:
  std::vector<std::int64_t> sizes_;
  OutputActivation output_;
};
TORCH_MODULE(Mlp);

/// Draws every parameter of `module` from N(0, stddev) in registration order,
/// except parameters whose name ends in "bias", which are zeroed. Buffers
/// named "*spectral_u" are reset to random unit vectors.
void init_weights(torch::nn::Module& module, Rng& rng, double stddev = 0.02);

/// Fills `t` in place from `rng` (standard normal scaled by `stddev`).
void fill_normal(torch::Tensor& t, Rng& rng, double stddev);

/// Sum of all parameter and buffer values in registration order, in double;
/// a cheap fingerprint for determinism checks.
double parameter_checksum(const torch::nn::Module& module);

}  // namespace relate
