#include "relate/latents.hpp"

#include <algorithm>
#include <stdexcept>

#include "relate/errors.hpp"

namespace relate {

bool LatentScene::corrected() const {
  return std::all_of(objects.begin(), objects.end(), [](const SceneObject& o) { return o.theta.has_value(); });
}

std::vector<Pose> LatentScene::poses() const {
  std::vector<Pose> out;
  out.reserve(objects.size());
  for (const auto& o : objects) {
    if (!o.theta) throw InvalidState("scene object has no corrected pose");
    out.push_back(*o.theta);
  }
  return out;
}

namespace {

std::vector<double> uniform_vector(Rng& rng, int n, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

LatentScene sample_scene(Rng& rng, const ModelConfig& cfg, std::optional<int> K) {
  cfg.validate();
  if (K && *K < 1) throw std::invalid_argument("sample_scene: K must be at least 1");
  const int count = K ? *K : rng.uniform_int(cfg.k_min, cfg.k_max);

  LatentScene scene;
  scene.z0 = uniform_vector(rng, cfg.background_dim, -1.0, 1.0);
  scene.objects.resize(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    auto& obj = scene.objects[static_cast<std::size_t>(k)];
    obj.z = uniform_vector(rng, cfg.foreground_dim, -1.0, 1.0);
    const bool chained = cfg.variant == Variant::kOrdered && cfg.correction != CorrectionMode::kIdentity;
    if (!chained || k == 0) {
      obj.theta_hat.x = rng.uniform(cfg.pose_x.lo, cfg.pose_x.hi);
      obj.theta_hat.y = rng.uniform(cfg.pose_y.lo, cfg.pose_y.hi);
    }
  }
  return scene;
}

std::vector<double> sample_background_eval(Rng& rng, const ModelConfig& cfg, double half_range) {
  if (!(half_range > 0.0 && half_range <= 1.0))
    throw std::invalid_argument("sample_background_eval: half_range must be in (0, 1]");
  return uniform_vector(rng, cfg.background_dim, -half_range, half_range);
}

std::pair<double, double> pose_to_pixel(Pose p, int image_side) {
  const double half = 0.5 * image_side;
  return {half * (1.0 - p.x), half * (1.0 - p.y)};
}

Pose pixel_to_pose(double px, double py, int image_side) {
  const double half = 0.5 * image_side;
  return {1.0 - px / half, 1.0 - py / half};
}

SceneBatch SceneBatch::to(torch::ScalarType dtype) const {
  return {z0.to(dtype), z.to(dtype), theta_hat.to(dtype), mask.to(dtype)};
}

SceneBatch sample_scene_batch(Rng& rng, const ModelConfig& cfg, int batch, std::optional<int> K,
                              double background_half_range) {
  if (batch < 1) throw std::invalid_argument("sample_scene_batch: batch must be positive");
  std::vector<LatentScene> scenes;
  scenes.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    scenes.push_back(sample_scene(rng, cfg, K));
    if (background_half_range < 1.0) scenes.back().z0 = sample_background_eval(rng, cfg, background_half_range);
  }
  return to_batch(scenes, cfg.foreground_dim);
}

SceneBatch to_batch(const std::vector<LatentScene>& scenes, int foreground_dim, torch::ScalarType dtype) {
  if (scenes.empty()) throw std::invalid_argument("to_batch: no scenes");
  const auto B = static_cast<std::int64_t>(scenes.size());
  const auto nb = static_cast<std::int64_t>(scenes.front().z0.size());
  std::int64_t nf = foreground_dim;
  std::int64_t slots = 1;
  for (const auto& s : scenes) {
    if (static_cast<std::int64_t>(s.z0.size()) != nb) throw InvalidState("to_batch: inconsistent z0 length");
    slots = std::max<std::int64_t>(slots, s.K());
    for (const auto& o : s.objects) {
      if (static_cast<std::int64_t>(o.z.size()) != nf) throw InvalidState("to_batch: inconsistent z length");
    }
  }

  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  SceneBatch out{torch::zeros({B, nb}, opts), torch::zeros({B, slots, nf}, opts),
                 torch::zeros({B, slots, 2}, opts), torch::zeros({B, slots}, opts)};
  auto z0 = out.z0.accessor<double, 2>();
  auto z = out.z.accessor<double, 3>();
  auto th = out.theta_hat.accessor<double, 3>();
  auto mask = out.mask.accessor<double, 2>();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = scenes[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < nb; ++i) z0[b][i] = s.z0[static_cast<std::size_t>(i)];
    for (std::int64_t k = 0; k < s.K(); ++k) {
      const auto& o = s.objects[static_cast<std::size_t>(k)];
      for (std::int64_t i = 0; i < nf; ++i) z[b][k][i] = o.z[static_cast<std::size_t>(i)];
      th[b][k][0] = o.theta_hat.x;
      th[b][k][1] = o.theta_hat.y;
      mask[b][k] = 1.0;
    }
  }
  return out.to(dtype);
}

torch::Tensor poses_tensor(const std::vector<LatentScene>& scenes, torch::ScalarType dtype) {
  std::int64_t slots = 1;
  for (const auto& s : scenes) slots = std::max<std::int64_t>(slots, s.K());
  auto out = torch::zeros({static_cast<std::int64_t>(scenes.size()), slots, 2}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const auto poses = scenes[b].poses();
    for (std::size_t k = 0; k < poses.size(); ++k) {
      acc[static_cast<std::int64_t>(b)][static_cast<std::int64_t>(k)][0] = poses[k].x;
      acc[static_cast<std::int64_t>(b)][static_cast<std::int64_t>(k)][1] = poses[k].y;
    }
  }
  return out.to(dtype);
}

}  // namespace relate
