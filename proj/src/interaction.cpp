#include "relate/interaction.hpp"

#include <algorithm>
#include <stdexcept>

#include "relate/errors.hpp"

namespace relate {
namespace {

void check_codes(const torch::Tensor& z, const torch::Tensor& z0, std::int64_t nf, std::int64_t nb) {
  if (z.dim() != 3 || z.size(-1) != nf)
    throw InvalidState("object codes have width " + std::to_string(z.size(-1)) + ", weights expect " +
                       std::to_string(nf));
  if (z0.dim() != 2 || z0.size(-1) != nb)
    throw InvalidState("background code has width " + std::to_string(z0.size(-1)) + ", weights expect " +
                       std::to_string(nb));
}

/// sum over q != k (live q only) of pair(state_k, state_q); state is [B, S, D].
torch::Tensor pairwise_sum(const Mlp& pair, const torch::Tensor& state, const torch::Tensor& mask) {
  const auto B = state.size(0);
  const auto S = state.size(1);
  const auto D = state.size(2);
  auto self = state.unsqueeze(2).expand({B, S, S, D});
  auto other = state.unsqueeze(1).expand({B, S, S, D});
  auto messages = pair->forward(torch::cat({self, other}, -1));  // [B, S, S, W]
  auto off_diagonal = 1.0 - torch::eye(S, state.options());
  auto weight = mask.unsqueeze(1) * off_diagonal.unsqueeze(0);  // [B, S(k), S(q)]
  // Accumulated in double so the sum does not depend on object order.
  return (messages.to(torch::kFloat64) * weight.unsqueeze(-1).to(torch::kFloat64)).sum(2).to(messages.scalar_type());
}

torch::ScalarType module_dtype(const torch::nn::Module& m) {
  auto params = m.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

torch::Tensor expand_background(const torch::Tensor& z0, std::int64_t slots) {
  return z0.unsqueeze(1).expand({z0.size(0), slots, z0.size(1)});
}

}  // namespace

PoseCorrectorImpl::PoseCorrectorImpl(const ModelConfig& cfg)
    : mode(cfg.correction), background_dim(cfg.background_dim), foreground_dim(cfg.foreground_dim) {
  const std::int64_t nf = cfg.foreground_dim;
  const std::int64_t nb = cfg.background_dim;
  pair = register_module("pair", Mlp(std::vector<std::int64_t>{2 * (nf + 2), 32, 32, kInteractionWidth},
                                     OutputActivation::kNone));
  effect = register_module("effect", Mlp(std::vector<std::int64_t>{2 + nf + nb + kInteractionWidth, 32, 32, 2},
                                         OutputActivation::kTanh));
}

torch::Tensor PoseCorrectorImpl::interaction_embedding(const torch::Tensor& theta_hat, const torch::Tensor& z,
                                                       const torch::Tensor& mask) const {
  return pairwise_sum(pair, torch::cat({theta_hat, z}, -1), mask);
}

torch::Tensor PoseCorrectorImpl::forward(const torch::Tensor& theta_hat, const torch::Tensor& z,
                                         const torch::Tensor& z0, const torch::Tensor& mask) const {
  check_codes(z, z0, foreground_dim, background_dim);
  if (mode == CorrectionMode::kIdentity) return theta_hat;
  // theta_hat may carry more precision than the weights; the networks see it
  // at their own precision and the residual is added at the caller's.
  const auto raw = theta_hat.to(z.scalar_type());
  const auto h = interaction_embedding(raw, z, mask);
  const auto zeta = effect->forward(torch::cat({raw, z, expand_background(z0, z.size(1)), h}, -1));
  return mode == CorrectionMode::kResidual ? theta_hat + zeta.to(theta_hat.scalar_type())
                                           : zeta.to(theta_hat.scalar_type());
}

OrderedCorrectorImpl::OrderedCorrectorImpl(const ModelConfig& cfg)
    : mode(cfg.correction), background_dim(cfg.background_dim), foreground_dim(cfg.foreground_dim) {
  const std::int64_t in = 2 + cfg.foreground_dim + cfg.background_dim;
  first = register_module("first", Mlp(std::vector<std::int64_t>{in, 128, 64, 2}, OutputActivation::kTanh));
  next = register_module("next", Mlp(std::vector<std::int64_t>{in, 128, 64, 2}, OutputActivation::kSigmoidXTanhY));
}

torch::Tensor OrderedCorrectorImpl::forward(const torch::Tensor& theta_hat, const torch::Tensor& z,
                                            const torch::Tensor& z0, const torch::Tensor& mask) const {
  check_codes(z, z0, foreground_dim, background_dim);
  (void)mask;  // the chain is evaluated for every slot; padded slots are never rendered
  const auto S = z.size(1);
  if (S == 0) throw std::invalid_argument("ordered correction needs at least one object");
  if (mode == CorrectionMode::kIdentity) return theta_hat;

  std::vector<torch::Tensor> chain;
  chain.reserve(static_cast<std::size_t>(S));
  const auto dtype = z.scalar_type();
  const auto base = theta_hat.select(1, 0);
  chain.push_back(base + first->forward(torch::cat({base.to(dtype), z.select(1, 0), z0}, -1)).to(base.scalar_type()));
  for (std::int64_t k = 1; k < S; ++k) {
    const auto& prev = chain.back();
    chain.push_back(prev + next->forward(torch::cat({prev.to(dtype), z.select(1, k - 1), z0}, -1)).to(prev.scalar_type()));
  }
  return torch::stack(chain, 1);
}

DynamicsImpl::DynamicsImpl(const ModelConfig& cfg)
    : background_dim(cfg.background_dim), foreground_dim(cfg.foreground_dim) {
  const std::int64_t nf = cfg.foreground_dim;
  const std::int64_t nb = cfg.background_dim;
  init = register_module("init", Mlp(std::vector<std::int64_t>{nf + nb + 2, 128, 128, 6}, OutputActivation::kTanh));
  pair = register_module("pair", Mlp(std::vector<std::int64_t>{2 * (2 + nf + 6), 32, 32, kInteractionWidth},
                                     OutputActivation::kNone));
  effect = register_module("effect", Mlp(std::vector<std::int64_t>{2 + nf + 6 + nb + kInteractionWidth, 32, 32, 2},
                                         OutputActivation::kTanh));
}

torch::Tensor DynamicsImpl::init_velocities(const torch::Tensor& theta0, const torch::Tensor& z,
                                            const torch::Tensor& z0) const {
  check_codes(z, z0, foreground_dim, background_dim);
  const auto out = init->forward(torch::cat({z, expand_background(z0, z.size(1)), theta0}, -1));
  return out.view({z.size(0), z.size(1), 3, 2});
}

torch::Tensor DynamicsImpl::next_velocity(const torch::Tensor& theta, const torch::Tensor& track,
                                          const torch::Tensor& z, const torch::Tensor& z0,
                                          const torch::Tensor& mask) const {
  check_codes(z, z0, foreground_dim, background_dim);
  if (!track.defined() || track.dim() != 4 || track.size(2) != 3 || track.size(3) != 2 ||
      track.size(1) != z.size(1))
    throw InvalidState("velocity tracks missing or malformed");
  const auto flat_track = track.flatten(2);  // [B, S, 6]
  const auto h = pairwise_sum(pair, torch::cat({theta, z, flat_track}, -1), mask);
  return effect->forward(torch::cat({theta, z, flat_track, expand_background(z0, z.size(1)), h}, -1));
}

std::pair<torch::Tensor, torch::Tensor> DynamicsImpl::step(const torch::Tensor& theta, const torch::Tensor& track,
                                                           const torch::Tensor& z, const torch::Tensor& z0,
                                                           const torch::Tensor& mask) const {
  const auto v = next_velocity(theta, track, z, z0, mask);
  auto pushed = torch::cat({track.slice(2, 1, 3), v.unsqueeze(2)}, 2);
  return {theta + v, pushed};
}

std::vector<torch::Tensor> DynamicsImpl::rollout(const torch::Tensor& theta0, const torch::Tensor& z,
                                                 const torch::Tensor& z0, const torch::Tensor& mask,
                                                 int frames) const {
  if (frames < 1) throw std::invalid_argument("rollout: frame count must be at least 1");
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(frames));
  out.push_back(theta0);
  auto track = init_velocities(theta0, z, z0);
  for (int t = 1; t < frames; ++t) {
    auto [theta, next_track] = step(out.back(), track, z, z0, mask);
    out.push_back(theta);
    track = next_track;
  }
  return out;
}

ScaleNetImpl::ScaleNetImpl(const ModelConfig& cfg)
    : base_window(cfg.window_side),
      canvas_side(cfg.canvas_side),
      background_dim(cfg.background_dim),
      foreground_dim(cfg.foreground_dim) {
  net = register_module("net", Mlp(std::vector<std::int64_t>{cfg.background_dim + 2 + cfg.foreground_dim, 32, 32, 1},
                                   OutputActivation::kTanh));
}

torch::Tensor ScaleNetImpl::forward(const torch::Tensor& z0, const torch::Tensor& theta, const torch::Tensor& z) const {
  check_codes(z, z0, foreground_dim, background_dim);
  return net->forward(torch::cat({expand_background(z0, z.size(1)), theta, z}, -1)).squeeze(-1);
}

torch::Tensor ScaleNetImpl::window_sides(const torch::Tensor& z0, const torch::Tensor& theta,
                                         const torch::Tensor& z) const {
  return scaled_window_sides(forward(z0, theta, z), base_window, canvas_side);
}

torch::Tensor scaled_window_sides(const torch::Tensor& sc, double base_window, double canvas_side) {
  return torch::clamp(base_window * (1.0 + sc), 1.0, canvas_side);
}

void VelocityTrack::push(Pose v) {
  velocities[0] = velocities[1];
  velocities[1] = velocities[2];
  velocities[2] = v;
}

torch::Tensor pose_tensor(const std::vector<Pose>& poses, torch::ScalarType dtype) {
  auto out = torch::zeros({static_cast<std::int64_t>(poses.size()), 2}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (std::size_t k = 0; k < poses.size(); ++k) {
    acc[static_cast<std::int64_t>(k)][0] = poses[k].x;
    acc[static_cast<std::int64_t>(k)][1] = poses[k].y;
  }
  return out.to(dtype);
}

std::vector<Pose> poses_from(const torch::Tensor& theta) {
  const auto t = theta.detach().to(torch::kFloat64).contiguous();
  auto acc = t.accessor<double, 2>();
  std::vector<Pose> out(static_cast<std::size_t>(t.size(0)));
  for (std::int64_t k = 0; k < t.size(0); ++k) out[static_cast<std::size_t>(k)] = {acc[k][0], acc[k][1]};
  return out;
}

torch::Tensor track_tensor(const std::vector<VelocityTrack>& tracks, torch::ScalarType dtype) {
  auto out = torch::zeros({static_cast<std::int64_t>(tracks.size()), 3, 2}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (std::size_t k = 0; k < tracks.size(); ++k) {
    for (int i = 0; i < 3; ++i) {
      acc[static_cast<std::int64_t>(k)][i][0] = tracks[k].velocities[static_cast<std::size_t>(i)].x;
      acc[static_cast<std::int64_t>(k)][i][1] = tracks[k].velocities[static_cast<std::size_t>(i)].y;
    }
  }
  return out.to(dtype);
}

std::vector<VelocityTrack> tracks_from(const torch::Tensor& track) {
  const auto t = track.detach().to(torch::kFloat64).contiguous();
  auto acc = t.accessor<double, 3>();
  std::vector<VelocityTrack> out(static_cast<std::size_t>(t.size(0)));
  for (std::int64_t k = 0; k < t.size(0); ++k)
    for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(k)].velocities[static_cast<std::size_t>(i)] = {acc[k][i][0], acc[k][i][1]};
  return out;
}

namespace {

/// Raw poses of a scene at full precision, [1, K, 2].
torch::Tensor raw_poses(const LatentScene& scene) {
  std::vector<Pose> raw;
  for (const auto& o : scene.objects) raw.push_back(o.theta_hat);
  return pose_tensor(raw, torch::kFloat64).unsqueeze(0);
}

}  // namespace

std::vector<Pose> correct_poses(const LatentScene& scene, const PoseCorrector& net) {
  torch::NoGradGuard guard;
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), module_dtype(*net));
  if (scene.K() == 0) return {};
  const auto theta = net->forward(raw_poses(scene), b.z, b.z0, b.mask);
  return poses_from(theta.select(0, 0));
}

std::vector<Pose> correct_poses_ordered(const LatentScene& scene, const OrderedCorrector& net) {
  if (scene.K() == 0) throw std::invalid_argument("correct_poses_ordered: K must be at least 1");
  torch::NoGradGuard guard;
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), module_dtype(*net));
  const auto theta = net->forward(raw_poses(scene), b.z, b.z0, b.mask);
  return poses_from(theta.select(0, 0));
}

Pose chain_next_pose(const LatentScene& scene, const OrderedCorrector& net, Pose theta_hat) {
  if (net->mode == CorrectionMode::kIdentity) return theta_hat;
  if (scene.K() == 0) throw std::invalid_argument("chain_next_pose: the scene has no object to build on");
  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*net);
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), dtype);
  const auto prev = pose_tensor({scene.poses().back()}, torch::kFloat64);  // [1, 2]
  const auto last = b.z.select(1, scene.K() - 1);
  return poses_from(prev + net->next->forward(torch::cat({prev.to(dtype), last, b.z0}, -1)).to(torch::kFloat64)).front();
}

void apply_correction(LatentScene& scene, const ModelConfig& cfg, const PoseCorrector& general,
                      const OrderedCorrector& ordered) {
  if (scene.K() == 0) return;
  const auto poses = cfg.variant == Variant::kOrdered ? correct_poses_ordered(scene, ordered)
                                                      : correct_poses(scene, general);
  for (std::size_t k = 0; k < poses.size(); ++k) scene.objects[k].theta = poses[k];
}

std::vector<VelocityTrack> init_velocities(const LatentScene& scene, const Dynamics& net) {
  if (scene.K() == 0) return {};
  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*net);
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), dtype);
  const auto theta0 = pose_tensor(scene.poses(), dtype).unsqueeze(0);
  return tracks_from(net->init_velocities(theta0, b.z, b.z0).select(0, 0));
}

DynamicsState step_dynamics(const std::vector<Pose>& poses, const std::vector<VelocityTrack>& tracks,
                            const LatentScene& scene, const Dynamics& net) {
  if (tracks.size() != static_cast<std::size_t>(scene.K()) || poses.size() != tracks.size())
    throw InvalidState("step_dynamics: velocity tracks missing for some objects");
  if (scene.K() == 0) return {};
  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*net);
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), dtype);
  const auto v = net->next_velocity(pose_tensor(poses, dtype).unsqueeze(0), track_tensor(tracks, dtype).unsqueeze(0),
                                    b.z, b.z0, b.mask);
  const auto velocities = poses_from(v.select(0, 0));
  DynamicsState out{poses, tracks};
  for (std::size_t k = 0; k < poses.size(); ++k) {
    out.poses[k] = poses[k] + velocities[k];
    out.tracks[k].push(velocities[k]);
  }
  return out;
}

std::vector<std::vector<Pose>> rollout(const LatentScene& scene, const Dynamics& net, int frames) {
  if (frames < 1) throw std::invalid_argument("rollout: frame count must be at least 1");
  std::vector<std::vector<Pose>> out;
  out.reserve(static_cast<std::size_t>(frames));
  DynamicsState state{scene.poses(), init_velocities(scene, net)};
  out.push_back(state.poses);
  for (int t = 1; t < frames; ++t) {
    state = step_dynamics(state.poses, state.tracks, scene, net);
    out.push_back(state.poses);
  }
  return out;
}

std::vector<double> predict_scales(const LatentScene& scene, const ScaleNet& net) {
  if (scene.K() == 0) return {};
  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*net);
  const auto b = to_batch({scene}, static_cast<int>(net->foreground_dim), dtype);
  const auto sides = net->window_sides(b.z0, pose_tensor(scene.poses(), dtype).unsqueeze(0), b.z)
                         .select(0, 0)
                         .to(torch::kFloat64)
                         .contiguous();
  return {sides.data_ptr<double>(), sides.data_ptr<double>() + sides.numel()};
}

}  // namespace relate
