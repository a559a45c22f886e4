#include "relate/model.hpp"

#include <stdexcept>

#include "relate/errors.hpp"

namespace relate {

GeneratorModelImpl::GeneratorModelImpl(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  if (cfg.variant == Variant::kOrdered) {
    ordered = register_module("ordered", OrderedCorrector(cfg));
  } else {
    corrector = register_module("corrector", PoseCorrector(cfg));
  }
  if (cfg.variant == Variant::kDynamic) dynamics = register_module("dynamics", Dynamics(cfg));
  if (cfg.scale_enabled) scale = register_module("scale", ScaleNet(cfg));
  renderer = register_module("renderer", Renderer(cfg));
}

torch::Tensor GeneratorModelImpl::correct(const SceneBatch& batch) const {
  return config.variant == Variant::kOrdered ? ordered->forward(batch.theta_hat, batch.z, batch.z0, batch.mask)
                                             : corrector->forward(batch.theta_hat, batch.z, batch.z0, batch.mask);
}

torch::Tensor GeneratorModelImpl::window_sides(const torch::Tensor& z0, const torch::Tensor& theta,
                                               const torch::Tensor& z) const {
  if (!scale) return {};
  return scale->window_sides(z0, theta, z);
}

std::vector<torch::Tensor> GeneratorModelImpl::trajectory(const SceneBatch& batch, int frames) const {
  const auto theta = correct(batch);
  if (!dynamics) {
    if (frames > 1) throw std::invalid_argument("only the dynamic variant produces multi-frame trajectories");
    return {theta};
  }
  return dynamics->rollout(theta, batch.z, batch.z0, batch.mask, frames > 0 ? frames : config.clip_length);
}

torch::Tensor GeneratorModelImpl::render_frames(const SceneBatch& batch, const std::vector<torch::Tensor>& poses,
                                                const torch::Tensor& mask, bool with_background) const {
  if (poses.empty()) throw std::invalid_argument("render_frames: empty trajectory");
  const auto B = batch.batch();
  const auto background = renderer->background_canvas(batch.z0);
  const auto windows = renderer->object_windows(batch.z);
  std::vector<torch::Tensor> canvases;
  canvases.reserve(poses.size());
  for (const auto& theta : poses) {
    const auto objects = renderer->object_canvases(windows, theta, window_sides(batch.z0, theta, batch.z));
    canvases.push_back(renderer->compose_scene(background, objects, mask, with_background));
  }
  const auto T = static_cast<std::int64_t>(poses.size());
  const auto images = renderer->generator->forward(torch::cat(canvases, 0));  // [T*B, 3, S, S]
  return images.reshape({T, B, 3, images.size(2), images.size(3)}).transpose(0, 1);
}

torch::Tensor GeneratorModelImpl::forward(const SceneBatch& batch) const {
  return stack_frames(render_frames(batch, trajectory(batch), batch.mask));
}

GeneratorModelImpl::SoloRender GeneratorModelImpl::render_solo(const SceneBatch& batch,
                                                               const torch::Tensor& index) const {
  const auto B = batch.batch();
  if (index.dim() != 1 || index.size(0) != B) throw std::invalid_argument("render_solo: need one index per scene");
  const auto theta = correct(batch);
  const auto one_hot =
      torch::zeros_like(batch.mask).scatter(1, index.to(torch::kLong).unsqueeze(1), 1.0) * batch.mask;
  const auto frame = render_frames(batch, {theta}, one_hot, /*with_background=*/true);  // [B, 1, 3, S, S]
  const auto clip = frame.expand({B, config.clip_length, 3, frame.size(3), frame.size(4)});
  const auto target = theta.gather(1, index.to(torch::kLong).reshape({B, 1, 1}).expand({B, 1, 2})).squeeze(1);
  return {stack_frames(clip), target};
}

LatentScene corrected(LatentScene scene, const GeneratorModel& model) {
  apply_correction(scene, model->config, model->corrector, model->ordered);
  return scene;
}

torch::Tensor render_latent_scene(const GeneratorModel& model, const LatentScene& scene, RenderOptions opts) {
  if (opts.window_sides.empty() && model->scale) opts.window_sides = predict_scales(scene, model->scale);
  return render_scene(scene, model->renderer, opts);
}

torch::Tensor stack_frames(const torch::Tensor& frames) {
  if (frames.dim() != 5) throw std::invalid_argument("stack_frames: expected [B, T, C, S, S]");
  return frames.reshape({frames.size(0), frames.size(1) * frames.size(2), frames.size(3), frames.size(4)});
}

torch::Tensor unstack_frames(const torch::Tensor& stacked) {
  if (stacked.dim() != 4 || stacked.size(1) % 3 != 0) throw std::invalid_argument("unstack_frames: expected [B, 3T, S, S]");
  return stacked.reshape({stacked.size(0), stacked.size(1) / 3, 3, stacked.size(2), stacked.size(3)});
}

}  // namespace relate
