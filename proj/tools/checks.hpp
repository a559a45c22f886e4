#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "relate/config.hpp"
#include "relate/interaction.hpp"
#include "relate/latents.hpp"
#include "relate/nn.hpp"
#include "relate/rng.hpp"

// Self-contained correctness probes shared by the unit tests and the
// acceptance runner. Every probe returns the measured quantity; callers
// compare it against their tolerance.

namespace relate::checks {

/// H = 8, C = 4, 16x16 images, K in [1, 3].
ModelConfig tiny_config(Variant variant = Variant::kGeneral);

/// Every parameter of `module` from N(0, stddev), biases included.
void randomize(torch::nn::Module& module, std::uint64_t seed, double stddev);

/// Scene with uniform codes and raw poses, no corrected poses.
LatentScene random_scene(Rng& rng, const ModelConfig& cfg, int K);

// ---- Brute-force references, evaluated element by element in double ----

std::vector<double> mlp_reference(const Mlp& mlp, std::vector<double> x, OutputActivation output);
std::vector<Pose> correction_reference(const LatentScene& scene, const PoseCorrector& net);
std::vector<Pose> ordered_reference(const LatentScene& scene, const OrderedCorrector& net);
std::vector<VelocityTrack> init_velocity_reference(const LatentScene& scene, const std::vector<Pose>& poses,
                                                   const Dynamics& net);
DynamicsState dynamics_step_reference(const std::vector<Pose>& poses, const std::vector<VelocityTrack>& tracks,
                                      const LatentScene& scene, const Dynamics& net);
/// out[c, y, x] = sum of bilinear taps of in around (x + dx, y + dy), zero outside.
torch::Tensor shift_reference(const torch::Tensor& canvas, double dx, double dy);

double max_deviation(const std::vector<Pose>& a, const std::vector<Pose>& b);

// ---- Interaction ------------------------------------------------------------

/// Largest |correct_poses(P scene) - P correct_poses(scene)| over a few
/// permutations, 32-bit weights.
double correction_equivariance(int K, std::uint64_t seed);
/// Same for one step_dynamics update (poses and velocity tracks).
double dynamics_equivariance(int K, std::uint64_t seed);
/// Module vs brute-force reference, 64-bit.
double correction_oracle_error(int K, std::uint64_t seed);
double ordered_oracle_error(int K, std::uint64_t seed);
double dynamics_oracle_error(int K, std::uint64_t seed);
/// max |h_1| for a single object.
double single_object_embedding(std::uint64_t seed);
/// max_t |theta(t) - (theta(0) + sum_{s <= t} v(s))| over a rollout of `frames`.
double telescoping_error(int frames, std::uint64_t seed);

// ---- Gradients ----------------------------------------------------------

struct GradientProbeStats {
  std::int64_t probes = 0;
  std::int64_t kinks = 0;  // entries skipped because the step crossed a kink
};

inline constexpr double kKinkTolerance = 1e-3;
inline constexpr double kKinkFloor = 1e-7;

/// Normwise relative error between autograd and central finite differences
/// (step `h`), worst over `inputs`. Up to `per_tensor` entries of each input
/// are probed; entries where the loss is not smooth at scale `h` are replaced.
/// `loss` must return a 64-bit scalar.
double gradient_error(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& inputs,
                      int per_tensor = 32, double h = 1e-5, std::uint64_t seed = 0,
                      GradientProbeStats* stats = nullptr);

struct NamedValue {
  std::string name;
  double value = 0.0;
};

std::vector<NamedValue> gradient_suite();
/// Largest |dL/dp| over Gamma parameters p when only the pose target of the
/// position loss depends on them. Second entry: the same loss without the
/// stop, which must be non-zero for the first number to mean anything.
std::pair<double, double> position_target_gradient(std::uint64_t seed);

// ---- Rendering ----------------------------------------------------------

/// Nonzero sites of a decoded foreground canvas outside its centered window
/// (must be 0), and the count of sites that are zero.
std::pair<std::int64_t, std::int64_t> window_sparsity(const ModelConfig& cfg, std::uint64_t seed);
double integer_shift_error(std::uint64_t seed);
double fractional_shift_error(std::uint64_t seed);
/// Bit-exact pooling result under permutation of the canvases.
bool pooling_permutation_exact(Pooling pooling, std::uint64_t seed);
/// Rendering with every window side forced to H' matches the default path bit for bit.
bool unit_scale_identical(std::uint64_t seed);

// ---- Metrics --------------------------------------------------------------

double frechet_self_distance(std::uint64_t seed);
/// Relative error of the Frechet distance between N(0,1) and N(1,1) samples
/// against the closed form 1.
double gaussian_frechet_error(std::int64_t n, std::uint64_t seed);
double disc_oracle_median(std::uint64_t seed);

// ---- Persistence --------------------------------------------------------

bool checkpoint_round_trip(const std::filesystem::path& dir);
/// Two runs of `steps` seeded train_steps end on the same checksums.
bool train_reproducible(int steps);
/// k steps, checkpoint, reload, n - k steps equals n continuous steps.
bool resume_equals_continuous(int steps, int split);

}  // namespace relate::checks
