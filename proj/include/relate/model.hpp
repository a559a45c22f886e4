#pragma once

#include <torch/torch.h>

#include <vector>

#include "relate/config.hpp"
#include "relate/interaction.hpp"
#include "relate/latents.hpp"
#include "relate/renderer.hpp"

namespace relate {

/// Everything upstream of the image: pose correction (general or ordered),
/// optional dynamics and scale modules, and the renderer.
struct GeneratorModelImpl : torch::nn::Module {
  explicit GeneratorModelImpl(const ModelConfig& cfg);

  /// Corrected poses [B, S, 2] for the configured variant.
  torch::Tensor correct(const SceneBatch& batch) const;
  /// Per-object window sides [B, S], or an undefined tensor when scale is off.
  torch::Tensor window_sides(const torch::Tensor& z0, const torch::Tensor& theta, const torch::Tensor& z) const;
  /// Pose per frame. Static variants return a single entry; the dynamic
  /// variant rolls the corrected poses forward for `frames` frames
  /// (default: the configured clip length).
  std::vector<torch::Tensor> trajectory(const SceneBatch& batch, int frames = 0) const;
  /// Renders each frame of a pose trajectory, [B, T, 3, S, S].
  torch::Tensor render_frames(const SceneBatch& batch, const std::vector<torch::Tensor>& poses,
                              const torch::Tensor& mask, bool with_background = true) const;
  /// Generated samples as discriminator input, [B, 3T, S, S].
  torch::Tensor forward(const SceneBatch& batch) const;

  struct SoloRender {
    torch::Tensor image;   // [B, 3T, S, S]: background plus object `index` only
    torch::Tensor target;  // [B, 2]: corrected pose of that object
  };
  /// Single-object renders for the position regularizer. Dynamic models
  /// repeat the static frame T times (zero velocity).
  SoloRender render_solo(const SceneBatch& batch, const torch::Tensor& index) const;

  PoseCorrector corrector{nullptr};
  OrderedCorrector ordered{nullptr};
  Dynamics dynamics{nullptr};
  ScaleNet scale{nullptr};
  Renderer renderer{nullptr};
  ModelConfig config;
};
TORCH_MODULE(GeneratorModel);

/// Fills the corrected pose of every object with the model's correction.
LatentScene corrected(LatentScene scene, const GeneratorModel& model);
/// render_scene with the model's predicted window sides when scale is enabled
/// and `opts` sets none.
torch::Tensor render_latent_scene(const GeneratorModel& model, const LatentScene& scene, RenderOptions opts = {});

/// [B, T, 3, S, S] -> [B, 3T, S, S], frames stacked along channels in time order.
torch::Tensor stack_frames(const torch::Tensor& frames);
/// Inverse of stack_frames.
torch::Tensor unstack_frames(const torch::Tensor& stacked);

}  // namespace relate
