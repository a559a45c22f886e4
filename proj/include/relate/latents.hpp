#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "relate/config.hpp"
#include "relate/rng.hpp"

namespace relate {

/// 2-D translation in normalized canvas coordinates. A pose of +-1 shifts a
/// feature canvas by +-H/2 cells; see pose_to_pixel for where that lands in
/// an image.
struct Pose {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Pose&, const Pose&) = default;
  friend Pose operator+(Pose a, Pose b) { return {a.x + b.x, a.y + b.y}; }
  friend Pose operator-(Pose a, Pose b) { return {a.x - b.x, a.y - b.y}; }
};

struct SceneObject {
  std::vector<double> z;         // appearance code, length N_f
  Pose theta_hat;                // raw, independently sampled pose
  std::optional<Pose> theta;     // corrected pose, set by the interaction module
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct LatentScene {
  std::vector<double> z0;        // background code, length N_b
  std::vector<SceneObject> objects;

  int K() const { return static_cast<int>(objects.size()); }
  bool corrected() const;
  /// Corrected poses; throws InvalidState if any object is uncorrected.
  std::vector<Pose> poses() const;

  friend bool operator==(const LatentScene&, const LatentScene&) = default;
};

/// z0 ~ U[-1,1]^N_b, z_k ~ U[-1,1]^N_f, theta_hat_k ~ U(pose range), and
/// K ~ U{K_min..K_max} unless given. For the ordered variant only the first
/// object gets a sampled raw pose and the rest stay at zero (unless the
/// correction is disabled, in which case every pose is sampled).
LatentScene sample_scene(Rng& rng, const ModelConfig& cfg, std::optional<int> K = std::nullopt);

/// Background code for evaluation, components ~ U[-half_range, half_range].
std::vector<double> sample_background_eval(Rng& rng, const ModelConfig& cfg, double half_range);

/// Continuous image position (x right, y down; pixel centers at i + 0.5) of
/// an object with pose `p`. Translation reads the canvas at u + theta, so
/// content moves by -theta: pose +1 maps to the left/top edge and -1 to the
/// right/bottom edge.
std::pair<double, double> pose_to_pixel(Pose p, int image_side);
Pose pixel_to_pose(double px, double py, int image_side);

/// Batched latents. Object slots beyond a scene's K are padded and masked.
struct SceneBatch {
  torch::Tensor z0;         // [B, N_b]
  torch::Tensor z;          // [B, S, N_f]
  torch::Tensor theta_hat;  // [B, S, 2]
  torch::Tensor mask;       // [B, S], 1 for live objects

  std::int64_t batch() const { return z0.size(0); }
  std::int64_t slots() const { return z.size(1); }
  SceneBatch to(torch::ScalarType dtype) const;
};

/// Samples B scenes. Per-scene K comes from `K` if given, otherwise uniform
/// in [K_min, K_max]; slot count is the largest K in the batch.
SceneBatch sample_scene_batch(Rng& rng, const ModelConfig& cfg, int batch, std::optional<int> K = std::nullopt,
                              double background_half_range = 1.0);

/// Packs scenes into a batch (padding to the largest K, at least one slot).
/// Every object code must have length `foreground_dim`.
SceneBatch to_batch(const std::vector<LatentScene>& scenes, int foreground_dim,
                    torch::ScalarType dtype = torch::kFloat32);
/// Corrected poses of a batch, one row per scene, as a [B, S, 2] tensor.
torch::Tensor poses_tensor(const std::vector<LatentScene>& scenes, torch::ScalarType dtype = torch::kFloat32);

}  // namespace relate
