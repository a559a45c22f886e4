#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "relate/config.hpp"
#include "relate/latents.hpp"

namespace relate {

inline constexpr double kInstanceNormEps = 1e-5;

/// Per-sample, per-channel normalization over the spatial dims of [N, C, h, w].
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = kInstanceNormEps);

/// Adaptive instance normalization: s = relu(W code + b) splits into a
/// per-channel scale and shift, out = scale * IN(x) + shift.
struct StyleModulationImpl : torch::nn::Module {
  StyleModulationImpl(std::int64_t code_dim, std::int64_t channels);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& code) const;

  torch::nn::Linear map{nullptr};
  std::int64_t channels;
};
TORCH_MODULE(StyleModulation);

/// Learned constant seed -> style -> two 3x3 transposed convolutions, each
/// followed by leaky ReLU and style modulation.
struct AppearanceDecoderImpl : torch::nn::Module {
  AppearanceDecoderImpl(std::int64_t code_dim, std::int64_t seed_slots, std::int64_t seed_channels,
                        std::int64_t side, std::int64_t hidden_channels, std::int64_t out_channels);

  /// code [N, code_dim], slot [N] (int64 seed index) -> [N, C, side, side].
  torch::Tensor forward(const torch::Tensor& code, const torch::Tensor& slot) const;

  torch::Tensor seed;  // [slots, seed_channels, side, side]
  StyleModulation style_seed{nullptr};
  torch::nn::ConvTranspose2d conv1{nullptr};
  StyleModulation style1{nullptr};
  torch::nn::ConvTranspose2d conv2{nullptr};
  StyleModulation style2{nullptr};
  std::int64_t code_dim;
  std::int64_t side;
};
TORCH_MODULE(AppearanceDecoder);

/// Transposed-convolution upsampler from the pooled canvas W to RGB in [-1, 1].
struct ImageGeneratorImpl : torch::nn::Module {
  explicit ImageGeneratorImpl(const ModelConfig& cfg);

  torch::Tensor forward(const torch::Tensor& w) const;

  std::vector<torch::nn::ConvTranspose2d> layers;
  std::int64_t in_channels;
  std::int64_t canvas_side;
};
TORCH_MODULE(ImageGenerator);

/// Centers [N, C, h, h] windows in an H x H canvas. With `sides` ([N], may
/// carry gradients) each window is bilinearly resized to its side first;
/// sites whose center lies outside the resized window are exactly zero.
torch::Tensor place_windows(const torch::Tensor& windows, std::int64_t canvas_side,
                            const torch::Tensor& sides = {});

/// out[u] = in[u + theta * H / 2] with zero padding and bilinear weights.
/// canvases [N, C, H, W], theta [N, 2] as (x, y).
torch::Tensor translate_canvases(const torch::Tensor& canvases, const torch::Tensor& theta);

/// Pools [N, L, C, H, W] over L, honoring a live mask [N, L]. Max pooling
/// breaks ties toward the lowest index; if no entry is live the result is 0.
torch::Tensor pool_canvases(const torch::Tensor& canvases, const torch::Tensor& mask, Pooling pooling);

/// Latents -> feature canvases -> image.
struct RendererImpl : torch::nn::Module {
  explicit RendererImpl(const ModelConfig& cfg);

  torch::Tensor background_canvas(const torch::Tensor& z0) const;      // [B, C, H, H]
  torch::Tensor object_windows(const torch::Tensor& z) const;          // [B, S, C, h, h]
  /// Placed and translated object canvases, [B, S, C, H, H].
  torch::Tensor object_canvases(const torch::Tensor& windows, const torch::Tensor& theta,
                                const torch::Tensor& sides = {}) const;
  torch::Tensor compose_scene(const torch::Tensor& background, const torch::Tensor& objects,
                              const torch::Tensor& mask, bool with_background) const;
  /// Full pipeline: z0 [B, N_b], z [B, S, N_f], theta [B, S, 2], mask [B, S].
  torch::Tensor forward(const torch::Tensor& z0, const torch::Tensor& z, const torch::Tensor& theta,
                        const torch::Tensor& mask, bool with_background = true,
                        const torch::Tensor& sides = {}) const;

  AppearanceDecoder background{nullptr};
  AppearanceDecoder foreground{nullptr};
  ImageGenerator generator{nullptr};
  ModelConfig config;
};
TORCH_MODULE(Renderer);

// Single-scene API over FeatureCanvas values.

enum class CanvasSource { kBackground, kObject, kComposed };

struct FeatureCanvas {
  torch::Tensor grid;  // [C, H, H]
  CanvasSource source = CanvasSource::kComposed;
  int object = -1;
};

FeatureCanvas decode_background(const std::vector<double>& z0, const Renderer& renderer);
/// `window_side` defaults to the configured H'; `slot` picks the seed when
/// per-object seeds are enabled.
FeatureCanvas decode_foreground(const std::vector<double>& z, const Renderer& renderer,
                                std::optional<double> window_side = std::nullopt, int slot = 0);
FeatureCanvas translate_canvas(const FeatureCanvas& canvas, Pose theta);
FeatureCanvas compose(const std::vector<FeatureCanvas>& canvases, Pooling pooling);
/// Image [3, S, S] in [-1, 1].
torch::Tensor render(const FeatureCanvas& w, const Renderer& renderer);

struct RenderOptions {
  std::optional<int> only_object;
  bool with_background = true;
  /// Per-object visibility; empty means all visible.
  std::vector<bool> visible;
  /// Per-object window sides; empty means the configured H'.
  std::vector<double> window_sides;
};

/// Renders a corrected scene to a [3, S, S] image.
torch::Tensor render_scene(const LatentScene& scene, const Renderer& renderer, const RenderOptions& opts = {});

}  // namespace relate
