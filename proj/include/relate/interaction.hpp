#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include "relate/config.hpp"
#include "relate/latents.hpp"
#include "relate/nn.hpp"

namespace relate {

/// Width of the pairwise interaction embedding h.
inline constexpr std::int64_t kInteractionWidth = 32;

// Batched tensor conventions used throughout this header:
//   theta, theta_hat: [B, S, 2]   z: [B, S, N_f]   z0: [B, N_b]
//   mask: [B, S] with 1 for live object slots
//   velocity track V: [B, S, 3, 2], oldest velocity first.

/// Static pose correction. Every object runs the same corrective function:
///
///   theta_k = theta_hat_k + f(theta_hat_k, z_k, z0, h_k),
///   h_k     = sum_{q != k} g(theta_hat_k, z_k, theta_hat_q, z_q),
///
/// so the result is equivariant under object permutations and defined for
/// any number of objects.
struct PoseCorrectorImpl : torch::nn::Module {
  explicit PoseCorrectorImpl(const ModelConfig& cfg);

  torch::Tensor forward(const torch::Tensor& theta_hat, const torch::Tensor& z, const torch::Tensor& z0,
                        const torch::Tensor& mask) const;
  /// h_k for every slot, [B, S, 32].
  torch::Tensor interaction_embedding(const torch::Tensor& theta_hat, const torch::Tensor& z,
                                      const torch::Tensor& mask) const;

  Mlp pair{nullptr};    // g: 2(N_f + 2) -> 32 -> 32 -> 32
  Mlp effect{nullptr};  // f: 2 + N_f + N_b + 32 -> 32 -> 32 -> 2, tanh
  CorrectionMode mode;
  std::int64_t background_dim;
  std::int64_t foreground_dim;
};
TORCH_MODULE(PoseCorrector);

/// Markov-chain correction for naturally ordered scenes (stacks):
///
///   theta_1 = theta_hat_1 + f0(theta_hat_1, z_1, z0)
///   theta_k = theta_{k-1} + f1(theta_{k-1}, z_{k-1}, z0),  k > 1.
struct OrderedCorrectorImpl : torch::nn::Module {
  explicit OrderedCorrectorImpl(const ModelConfig& cfg);

  torch::Tensor forward(const torch::Tensor& theta_hat, const torch::Tensor& z, const torch::Tensor& z0,
                        const torch::Tensor& mask) const;

  Mlp first{nullptr};  // f0: 2 + N_f + N_b -> 128 -> 64 -> 2, tanh
  Mlp next{nullptr};   // f1: 2 + N_f + N_b -> 128 -> 64 -> 2, sigmoid(x) / tanh(y)
  CorrectionMode mode;
  std::int64_t background_dim;
  std::int64_t foreground_dim;
};
TORCH_MODULE(OrderedCorrector);

/// Velocity-driven rollout of corrected poses:
///
///   V_k(0)     = e_v(z_k, z0, theta_k(0))
///   v_k(t+1)   = f_v(theta_k(t), z_k, V_k(t), z0, h_k(t))
///   h_k(t)     = sum_{q != k} g_v(theta_k(t), z_k, V_k(t), theta_q(t), z_q, V_q(t))
///   theta(t+1) = theta(t) + v(t+1)
struct DynamicsImpl : torch::nn::Module {
  explicit DynamicsImpl(const ModelConfig& cfg);

  torch::Tensor init_velocities(const torch::Tensor& theta0, const torch::Tensor& z, const torch::Tensor& z0) const;
  /// New velocity v(t+1) for every slot, [B, S, 2].
  torch::Tensor next_velocity(const torch::Tensor& theta, const torch::Tensor& track, const torch::Tensor& z,
                              const torch::Tensor& z0, const torch::Tensor& mask) const;
  /// One update; returns (theta(t+1), V(t+1)).
  std::pair<torch::Tensor, torch::Tensor> step(const torch::Tensor& theta, const torch::Tensor& track,
                                               const torch::Tensor& z, const torch::Tensor& z0,
                                               const torch::Tensor& mask) const;
  /// Frames 0..T-1; frame 0 is theta0.
  std::vector<torch::Tensor> rollout(const torch::Tensor& theta0, const torch::Tensor& z, const torch::Tensor& z0,
                                     const torch::Tensor& mask, int frames) const;

  Mlp init{nullptr};    // e_v: N_f + N_b + 2 -> 128 -> 128 -> 6, tanh
  Mlp pair{nullptr};    // g_v: 2(2 + N_f + 6) -> 32 -> 32 -> 32
  Mlp effect{nullptr};  // f_v: 2 + N_f + 6 + N_b + 32 -> 32 -> 32 -> 2, tanh
  std::int64_t background_dim;
  std::int64_t foreground_dim;
};
TORCH_MODULE(Dynamics);

/// Per-object window size: H'_k = H' (1 + sc(z0, theta_k, z_k)).
struct ScaleNetImpl : torch::nn::Module {
  explicit ScaleNetImpl(const ModelConfig& cfg);

  /// Raw sc output in (-1, 1), [B, S].
  torch::Tensor forward(const torch::Tensor& z0, const torch::Tensor& theta, const torch::Tensor& z) const;
  /// H'_k clamped to [1, H], [B, S].
  torch::Tensor window_sides(const torch::Tensor& z0, const torch::Tensor& theta, const torch::Tensor& z) const;

  Mlp net{nullptr};  // N_b + 2 + N_f -> 32 -> 32 -> 1, tanh
  double base_window;
  double canvas_side;
  std::int64_t background_dim;
  std::int64_t foreground_dim;
};
TORCH_MODULE(ScaleNet);

/// H' (1 + sc), clamped to [1, H].
torch::Tensor scaled_window_sides(const torch::Tensor& sc, double base_window, double canvas_side);

/// The last three velocities of one object, oldest first.
struct VelocityTrack {
  std::array<Pose, 3> velocities{};

  /// Appends `v` and evicts the oldest entry.
  void push(Pose v);
  const Pose& latest() const { return velocities[2]; }
  friend bool operator==(const VelocityTrack&, const VelocityTrack&) = default;
};

// Single-scene entry points over LatentScene. They run in the dtype of the
// module parameters.

std::vector<Pose> correct_poses(const LatentScene& scene, const PoseCorrector& net);
std::vector<Pose> correct_poses_ordered(const LatentScene& scene, const OrderedCorrector& net);
/// One step of the ordered chain from the last object of a corrected scene:
/// where an object placed on top of it goes. Identity mode returns `theta_hat`.
Pose chain_next_pose(const LatentScene& scene, const OrderedCorrector& net, Pose theta_hat = {});
/// Fills `theta` on every object of `scene` with the matching correction.
void apply_correction(LatentScene& scene, const ModelConfig& cfg, const PoseCorrector& general,
                      const OrderedCorrector& ordered);

std::vector<VelocityTrack> init_velocities(const LatentScene& scene, const Dynamics& net);

struct DynamicsState {
  std::vector<Pose> poses;
  std::vector<VelocityTrack> tracks;
};
DynamicsState step_dynamics(const std::vector<Pose>& poses, const std::vector<VelocityTrack>& tracks,
                            const LatentScene& scene, const Dynamics& net);
/// T pose lists; the first holds the corrected poses of `scene`.
std::vector<std::vector<Pose>> rollout(const LatentScene& scene, const Dynamics& net, int frames);

std::vector<double> predict_scales(const LatentScene& scene, const ScaleNet& net);

/// Tensor <-> value conversions used by the entry points above.
torch::Tensor track_tensor(const std::vector<VelocityTrack>& tracks, torch::ScalarType dtype);
std::vector<VelocityTrack> tracks_from(const torch::Tensor& track);  // [S, 3, 2]
std::vector<Pose> poses_from(const torch::Tensor& theta);            // [S, 2]
torch::Tensor pose_tensor(const std::vector<Pose>& poses, torch::ScalarType dtype);  // [S, 2]

}  // namespace relate
