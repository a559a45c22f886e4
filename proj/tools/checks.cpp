#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "relate/adversary.hpp"
#include "relate/checkpoint.hpp"
#include "relate/eval.hpp"
#include "relate/losses.hpp"
#include "relate/model.hpp"
#include "relate/renderer.hpp"
#include "relate/trainer.hpp"

namespace relate::checks {
namespace {

double leaky(double v) { return v > 0.0 ? v : kLeakySlope * v; }

std::vector<double> concat(std::initializer_list<std::vector<double>> parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> xy(Pose p) { return {p.x, p.y}; }

std::vector<double> flat(const VelocityTrack& t) {
  std::vector<double> out;
  for (const auto& v : t.velocities) {
    out.push_back(v.x);
    out.push_back(v.y);
  }
  return out;
}

/// Reversal, rotation by one and a seeded shuffle.
std::vector<std::vector<int>> permutations(int K, std::uint64_t seed) {
  std::vector<int> id(static_cast<std::size_t>(K));
  std::iota(id.begin(), id.end(), 0);
  auto reversed = id;
  std::reverse(reversed.begin(), reversed.end());
  auto rotated = id;
  std::rotate(rotated.begin(), rotated.begin() + (K > 1 ? 1 : 0), rotated.end());
  auto shuffled = id;
  Rng rng(seed);
  for (int i = K - 1; i > 0; --i) std::swap(shuffled[static_cast<std::size_t>(i)],
                                            shuffled[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return {reversed, rotated, shuffled};
}

LatentScene permuted(const LatentScene& s, const std::vector<int>& perm) {
  LatentScene out{s.z0, {}};
  for (int p : perm) out.objects.push_back(s.objects[static_cast<std::size_t>(p)]);
  return out;
}

template <typename T>
std::vector<T> permuted(const std::vector<T>& v, const std::vector<int>& perm) {
  std::vector<T> out;
  for (int p : perm) out.push_back(v[static_cast<std::size_t>(p)]);
  return out;
}

std::vector<Pose> random_poses(Rng& rng, int K, double range) {
  std::vector<Pose> out(static_cast<std::size_t>(K));
  for (auto& p : out) p = {rng.uniform(-range, range), rng.uniform(-range, range)};
  return out;
}

std::vector<VelocityTrack> random_tracks(Rng& rng, int K) {
  std::vector<VelocityTrack> out(static_cast<std::size_t>(K));
  for (auto& t : out)
    for (auto& v : t.velocities) v = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  return out;
}

LatentScene with_poses(LatentScene s, const std::vector<Pose>& poses) {
  for (std::size_t k = 0; k < poses.size(); ++k) s.objects[k].theta = poses[k];
  return s;
}

double track_deviation(const std::vector<VelocityTrack>& a, const std::vector<VelocityTrack>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < 3; ++i) {
      worst = std::max(worst, std::abs(a[k].velocities[i].x - b[k].velocities[i].x));
      worst = std::max(worst, std::abs(a[k].velocities[i].y - b[k].velocities[i].y));
    }
  return worst;
}

torch::Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double stddev = 1.0,
                            torch::ScalarType dtype = torch::kFloat64) {
  auto t = torch::zeros(shape, torch::kFloat64);
  fill_normal(t, rng, stddev);
  return t.to(dtype);
}

torch::Tensor leaf(torch::Tensor t) { return t.detach().clone().set_requires_grad(true); }

std::vector<torch::Tensor> trainable(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p);
  return out;
}

std::vector<torch::Tensor> joined(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

ModelConfig tiny_config(Variant variant) {
  ModelConfig cfg;
  cfg.background_dim = 3;
  cfg.foreground_dim = 2;
  cfg.canvas_side = 8;
  cfg.window_side = 4;
  cfg.channels = 4;
  cfg.image_side = 16;
  cfg.k_min = 1;
  cfg.k_max = 3;
  cfg.background_seed_channels = 4;
  cfg.foreground_seed_channels = 4;
  cfg.decoder_hidden_channels = 4;
  cfg.generator_channels = {4, 4, 4, 4};
  cfg.discriminator_channels = {4, 4, 8, 8, 8};
  cfg.variant = variant;
  if (variant == Variant::kDynamic) cfg.clip_length = 3;
  cfg.validate();
  return cfg;
}

void randomize(torch::nn::Module& module, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  torch::NoGradGuard guard;
  for (auto& p : module.parameters()) fill_normal(p, rng, stddev);
}

LatentScene random_scene(Rng& rng, const ModelConfig& cfg, int K) {
  LatentScene s;
  for (int i = 0; i < cfg.background_dim; ++i) s.z0.push_back(rng.uniform(-1.0, 1.0));
  for (int k = 0; k < K; ++k) {
    SceneObject o;
    for (int i = 0; i < cfg.foreground_dim; ++i) o.z.push_back(rng.uniform(-1.0, 1.0));
    o.theta_hat = {rng.uniform(cfg.pose_x.lo, cfg.pose_x.hi), rng.uniform(cfg.pose_y.lo, cfg.pose_y.hi)};
    s.objects.push_back(o);
  }
  return s;
}

std::vector<double> mlp_reference(const Mlp& mlp, std::vector<double> x, OutputActivation output) {
  for (std::size_t i = 0; i < mlp->layers.size(); ++i) {
    const auto w = mlp->layers[i]->weight.detach().to(torch::kFloat64).contiguous();
    const auto b = mlp->layers[i]->bias.detach().to(torch::kFloat64).contiguous();
    auto wa = w.accessor<double, 2>();
    auto ba = b.accessor<double, 1>();
    if (static_cast<std::int64_t>(x.size()) != w.size(1)) throw std::invalid_argument("mlp_reference: width mismatch");
    std::vector<double> y(static_cast<std::size_t>(w.size(0)));
    for (std::int64_t r = 0; r < w.size(0); ++r) {
      double acc = ba[r];
      for (std::int64_t c = 0; c < w.size(1); ++c) acc += wa[r][c] * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = i + 1 < mlp->layers.size() ? leaky(acc) : acc;
    }
    x = std::move(y);
  }
  switch (output) {
    case OutputActivation::kNone: break;
    case OutputActivation::kTanh:
      for (auto& v : x) v = std::tanh(v);
      break;
    case OutputActivation::kSigmoidXTanhY:
      x[0] = 1.0 / (1.0 + std::exp(-x[0]));
      x[1] = std::tanh(x[1]);
      break;
  }
  return x;
}

std::vector<Pose> correction_reference(const LatentScene& scene, const PoseCorrector& net) {
  const auto K = scene.objects.size();
  std::vector<Pose> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& a = scene.objects[k];
    std::vector<double> h(kInteractionWidth, 0.0);
    for (std::size_t q = 0; q < K; ++q) {
      if (q == k) continue;
      const auto& b = scene.objects[q];
      const auto m = mlp_reference(net->pair, concat({xy(a.theta_hat), a.z, xy(b.theta_hat), b.z}),
                                   OutputActivation::kNone);
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += m[i];
    }
    const auto zeta = mlp_reference(net->effect, concat({xy(a.theta_hat), a.z, scene.z0, h}), OutputActivation::kTanh);
    out[k] = a.theta_hat + Pose{zeta[0], zeta[1]};
  }
  return out;
}

std::vector<Pose> ordered_reference(const LatentScene& scene, const OrderedCorrector& net) {
  std::vector<Pose> out;
  const auto& first = scene.objects.front();
  const auto d0 = mlp_reference(net->first, concat({xy(first.theta_hat), first.z, scene.z0}), OutputActivation::kTanh);
  out.push_back(first.theta_hat + Pose{d0[0], d0[1]});
  for (std::size_t k = 1; k < scene.objects.size(); ++k) {
    const auto d = mlp_reference(net->next, concat({xy(out.back()), scene.objects[k - 1].z, scene.z0}),
                                 OutputActivation::kSigmoidXTanhY);
    out.push_back(out.back() + Pose{d[0], d[1]});
  }
  return out;
}

std::vector<VelocityTrack> init_velocity_reference(const LatentScene& scene, const std::vector<Pose>& poses,
                                                   const Dynamics& net) {
  std::vector<VelocityTrack> out(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const auto v = mlp_reference(net->init, concat({scene.objects[k].z, scene.z0, xy(poses[k])}), OutputActivation::kTanh);
    for (std::size_t i = 0; i < 3; ++i) out[k].velocities[i] = {v[2 * i], v[2 * i + 1]};
  }
  return out;
}

DynamicsState dynamics_step_reference(const std::vector<Pose>& poses, const std::vector<VelocityTrack>& tracks,
                                      const LatentScene& scene, const Dynamics& net) {
  const auto K = poses.size();
  DynamicsState out{poses, tracks};
  for (std::size_t k = 0; k < K; ++k) {
    const auto self = concat({xy(poses[k]), scene.objects[k].z, flat(tracks[k])});
    std::vector<double> h(kInteractionWidth, 0.0);
    for (std::size_t q = 0; q < K; ++q) {
      if (q == k) continue;
      const auto m = mlp_reference(net->pair, concat({self, xy(poses[q]), scene.objects[q].z, flat(tracks[q])}),
                                   OutputActivation::kNone);
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += m[i];
    }
    const auto v = mlp_reference(net->effect, concat({xy(poses[k]), scene.objects[k].z, flat(tracks[k]), scene.z0, h}),
                                 OutputActivation::kTanh);
    out.poses[k] = poses[k] + Pose{v[0], v[1]};
    out.tracks[k].push({v[0], v[1]});
  }
  return out;
}

torch::Tensor shift_reference(const torch::Tensor& canvas, double dx, double dy) {
  const auto in = canvas.detach().to(torch::kFloat64).contiguous();
  const auto C = in.size(0), H = in.size(1), W = in.size(2);
  auto out = torch::zeros({C, H, W}, torch::kFloat64);
  auto ia = in.accessor<double, 3>();
  auto oa = out.accessor<double, 3>();
  const auto at = [&](std::int64_t c, std::int64_t y, std::int64_t x) {
    return (y < 0 || y >= H || x < 0 || x >= W) ? 0.0 : ia[c][y][x];
  };
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double sx = static_cast<double>(x) + dx;
        const double sy = static_cast<double>(y) + dy;
        const auto x0 = static_cast<std::int64_t>(std::floor(sx));
        const auto y0 = static_cast<std::int64_t>(std::floor(sy));
        const double fx = sx - static_cast<double>(x0);
        const double fy = sy - static_cast<double>(y0);
        oa[c][y][x] = (1 - fx) * (1 - fy) * at(c, y0, x0) + fx * (1 - fy) * at(c, y0, x0 + 1) +
                      (1 - fx) * fy * at(c, y0 + 1, x0) + fx * fy * at(c, y0 + 1, x0 + 1);
      }
  return out;
}

double max_deviation(const std::vector<Pose>& a, const std::vector<Pose>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    worst = std::max({worst, std::abs(a[k].x - b[k].x), std::abs(a[k].y - b[k].y)});
  return worst;
}

// ---- Interaction ------------------------------------------------------------

double correction_equivariance(int K, std::uint64_t seed) {
  const auto cfg = tiny_config();
  PoseCorrector net(cfg);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto scene = random_scene(rng, cfg, K);
  const auto base = correct_poses(scene, net);
  double worst = 0.0;
  for (const auto& perm : permutations(K, seed))
    worst = std::max(worst, max_deviation(correct_poses(permuted(scene, perm), net), permuted(base, perm)));
  return worst;
}

double dynamics_equivariance(int K, std::uint64_t seed) {
  const auto cfg = tiny_config(Variant::kDynamic);
  Dynamics net(cfg);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto poses = random_poses(rng, K, 0.8);
  const auto scene = with_poses(random_scene(rng, cfg, K), poses);
  const auto tracks = random_tracks(rng, K);
  const auto base = step_dynamics(poses, tracks, scene, net);
  double worst = 0.0;
  for (const auto& perm : permutations(K, seed)) {
    const auto moved = step_dynamics(permuted(poses, perm), permuted(tracks, perm), permuted(scene, perm), net);
    worst = std::max(worst, max_deviation(moved.poses, permuted(base.poses, perm)));
    worst = std::max(worst, track_deviation(moved.tracks, permuted(base.tracks, perm)));
  }
  return worst;
}

double correction_oracle_error(int K, std::uint64_t seed) {
  const auto cfg = tiny_config();
  PoseCorrector net(cfg);
  net->to(torch::kFloat64);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto scene = random_scene(rng, cfg, K);
  return max_deviation(correct_poses(scene, net), correction_reference(scene, net));
}

double ordered_oracle_error(int K, std::uint64_t seed) {
  const auto cfg = tiny_config(Variant::kOrdered);
  OrderedCorrector net(cfg);
  net->to(torch::kFloat64);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto scene = random_scene(rng, cfg, K);
  return max_deviation(correct_poses_ordered(scene, net), ordered_reference(scene, net));
}

double dynamics_oracle_error(int K, std::uint64_t seed) {
  const auto cfg = tiny_config(Variant::kDynamic);
  Dynamics net(cfg);
  net->to(torch::kFloat64);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto poses = random_poses(rng, K, 0.8);
  const auto scene = with_poses(random_scene(rng, cfg, K), poses);
  const auto tracks = init_velocities(scene, net);
  double worst = track_deviation(tracks, init_velocity_reference(scene, poses, net));
  const auto got = step_dynamics(poses, tracks, scene, net);
  const auto want = dynamics_step_reference(poses, tracks, scene, net);
  worst = std::max(worst, max_deviation(got.poses, want.poses));
  return std::max(worst, track_deviation(got.tracks, want.tracks));
}

double single_object_embedding(std::uint64_t seed) {
  const auto cfg = tiny_config();
  PoseCorrector net(cfg);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const auto b = to_batch({random_scene(rng, cfg, 1)}, cfg.foreground_dim);
  torch::NoGradGuard guard;
  return net->interaction_embedding(b.theta_hat, b.z, b.mask).abs().max().item<double>();
}

double telescoping_error(int frames, std::uint64_t seed) {
  const auto cfg = tiny_config(Variant::kDynamic);
  Dynamics net(cfg);
  randomize(*net, seed, 0.3);
  Rng rng(seed + 1);
  const int K = 3;
  const auto scene = with_poses(random_scene(rng, cfg, K), random_poses(rng, K, 0.5));
  DynamicsState state{scene.poses(), init_velocities(scene, net)};
  auto sum = state.poses;
  double worst = 0.0;
  for (int t = 1; t < frames; ++t) {
    state = step_dynamics(state.poses, state.tracks, scene, net);
    for (int k = 0; k < K; ++k) sum[static_cast<std::size_t>(k)] =
        sum[static_cast<std::size_t>(k)] + state.tracks[static_cast<std::size_t>(k)].latest();
    worst = std::max(worst, max_deviation(state.poses, sum));
  }
  return worst;
}

// ---- Gradients ----------------------------------------------------------

double gradient_error(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& inputs,
                      int per_tensor, double h, std::uint64_t seed, GradientProbeStats* stats) {
  const auto value = loss();
  if (value.scalar_type() != torch::kFloat64 || value.numel() != 1)
    throw std::invalid_argument("gradient_error: loss must be a 64-bit scalar");
  const double centre = value.item<double>();
  const auto grads = torch::autograd::grad({value}, inputs, {}, false, false, /*allow_unused=*/true);
  Rng rng(seed);
  GradientProbeStats local;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& x = inputs[i];
    const auto n = x.numel();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t j = n - 1; j > 0; --j)
      std::swap(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(j)))]);
    const auto analytic_all =
        grads[i].defined() ? grads[i].detach().reshape({-1}) : torch::zeros({n}, torch::kFloat64);
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    int used = 0, kinks = 0;
    for (const auto j : order) {
      if (used >= per_tensor || kinks >= 4 * per_tensor) break;
      double plus = 0.0, minus = 0.0;
      {
        torch::NoGradGuard guard;
        auto flat_x = x.view({-1});
        const double orig = flat_x[j].item<double>();
        flat_x[j].fill_(orig + h);
        plus = loss().item<double>();
        flat_x[j].fill_(orig - h);
        minus = loss().item<double>();
        flat_x[j].fill_(orig);
      }
      // A probe whose one-sided slopes disagree straddles a kink, where the
      // central difference is not a derivative; another entry is drawn.
      const double right = (plus - centre) / h, left = (centre - minus) / h;
      if (std::abs(right - left) > kKinkTolerance * (std::abs(right) + std::abs(left)) + kKinkFloor) {
        ++kinks;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = analytic_all[j].item<double>();
      diff += (analytic - numeric) * (analytic - numeric);
      norm_a += analytic * analytic;
      norm_n += numeric * numeric;
      ++used;
    }
    local.probes += used;
    local.kinks += kinks;
    if (used == 0 && kinks > 0) {
      worst = std::max(worst, 1.0);  // nothing smooth to compare against
      continue;
    }
    const double scale = std::max(std::sqrt(norm_a), std::sqrt(norm_n));
    if (scale < 1e-8) continue;  // nothing measurable flows into this input
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  if (stats) *stats = local;
  return worst;
}

std::vector<NamedValue> gradient_suite() {
  std::vector<NamedValue> out;
  Rng rng(11);

  {
    const auto canvases = random_tensor(rng, {2, 3, 8, 8});
    const auto weights = random_tensor(rng, {2, 3, 8, 8});
    auto theta = leaf(torch::tensor({{0.137, -0.291}, {-0.613, 0.452}}, torch::kFloat64));
    out.push_back({"translate_canvas wrt theta",
                   gradient_error([&] { return (translate_canvases(canvases, theta) * weights).sum(); }, {theta})});
  }
  for (auto pooling : {Pooling::kMax, Pooling::kSum}) {
    std::vector<torch::Tensor> grids;
    for (int l = 0; l < 4; ++l) grids.push_back(leaf(random_tensor(rng, {3, 6, 6})));
    const auto weights = random_tensor(rng, {3, 6, 6});
    const auto fn = [&] {
      std::vector<FeatureCanvas> cs;
      for (const auto& g : grids) cs.push_back({g, CanvasSource::kObject, 0});
      return (compose(cs, pooling).grid * weights).sum();
    };
    out.push_back({"compose " + to_string(pooling), gradient_error(fn, grids)});
  }
  {
    const auto cfg = tiny_config();
    PoseCorrector net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 21, 0.3);
    const auto b = to_batch({random_scene(rng, cfg, 3), random_scene(rng, cfg, 3)}, cfg.foreground_dim, torch::kFloat64);
    auto theta_hat = leaf(b.theta_hat), z = leaf(b.z), z0 = leaf(b.z0);
    const auto weights = random_tensor(rng, {2, 3, 2});
    out.push_back({"gamma general",
                   gradient_error([&] { return (net->forward(theta_hat, z, z0, b.mask) * weights).sum(); },
                                  joined(trainable(*net), {theta_hat, z, z0}))});
  }
  {
    const auto cfg = tiny_config(Variant::kOrdered);
    OrderedCorrector net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 22, 0.3);
    const auto b = to_batch({random_scene(rng, cfg, 3), random_scene(rng, cfg, 3)}, cfg.foreground_dim, torch::kFloat64);
    auto theta_hat = leaf(b.theta_hat), z = leaf(b.z), z0 = leaf(b.z0);
    const auto weights = random_tensor(rng, {2, 3, 2});
    out.push_back({"gamma ordered",
                   gradient_error([&] { return (net->forward(theta_hat, z, z0, b.mask) * weights).sum(); },
                                  joined(trainable(*net), {theta_hat, z, z0}))});
  }
  {
    const auto cfg = tiny_config(Variant::kDynamic);
    Dynamics net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 23, 0.3);
    const auto b = to_batch({random_scene(rng, cfg, 3), random_scene(rng, cfg, 3)}, cfg.foreground_dim, torch::kFloat64);
    auto theta0 = leaf(b.theta_hat), z = leaf(b.z), z0 = leaf(b.z0);
    const auto weights = random_tensor(rng, {4, 2, 3, 2});
    const auto fn = [&] {
      const auto frames = net->rollout(theta0, z, z0, b.mask, 4);
      return (torch::stack(frames, 0) * weights).sum();
    };
    out.push_back({"gamma dynamic", gradient_error(fn, joined(trainable(*net), {theta0, z, z0}))});
  }
  {
    auto phi = leaf(random_tensor(rng, {2, 3, 4, 4}));
    const auto wm = random_tensor(rng, {2, 3});
    const auto wv = random_tensor(rng, {2, 3});
    const auto fn = [&] {
      const auto [mu, var] = layer_style_stats(phi);
      return (mu * wm).sum() + (var * wv).sum();
    };
    out.push_back({"layer_style_stats", gradient_error(fn, {phi})});
  }
  {
    const auto cfg = tiny_config();
    GeneratorModel g(cfg);
    Discriminator d(cfg);
    g->to(torch::kFloat64);
    d->to(torch::kFloat64);
    randomize(*g, 24, 0.25);
    randomize(*d, 25, 0.25);
    d->eval();  // hold the spectral-norm vectors fixed
    const auto b = to_batch({random_scene(rng, cfg, 2), random_scene(rng, cfg, 3)}, cfg.foreground_dim, torch::kFloat64);
    SceneBatch lb{leaf(b.z0), leaf(b.z), leaf(b.theta_hat), b.mask};
    const auto index = torch::tensor({1, 0}, torch::kLong);
    const auto weights = random_tensor(rng, {2, 2});
    // The position target is a stop-gradient, so the reference holds it fixed.
    const auto target = g->render_solo(lb, index).target.detach();
    const auto fn = [&] {
      const auto out = d->forward(g->forward(lb));
      const auto solo = g->render_solo(lb, index);
      auto loss = generator_gan_loss(out.prob) + generator_style_loss(out.style_probs) + (out.pose * weights).sum();
      return loss + loss_position(target, d->forward(solo.image).pose);
    };
    const auto inputs = joined(joined(trainable(*g), trainable(*d)), {lb.z0, lb.z, lb.theta_hat});
    out.push_back({"miniature pipeline", gradient_error(fn, inputs, 8)});
  }
  return out;
}

std::pair<double, double> position_target_gradient(std::uint64_t seed) {
  const auto cfg = tiny_config();
  GeneratorModel g(cfg);
  Discriminator d(cfg);
  g->to(torch::kFloat64);
  d->to(torch::kFloat64);
  randomize(*g, seed, 0.25);
  randomize(*d, seed + 1, 0.25);
  d->eval();
  Rng rng(seed + 2);
  const auto batch = sample_scene_batch(rng, cfg, 4, 2).to(torch::kFloat64);
  const auto index = torch::tensor({0, 1, 1, 0}, torch::kLong);
  const auto gamma = trainable(*g->corrector);

  const auto largest = [&](const torch::Tensor& loss) {
    const auto grads = torch::autograd::grad({loss}, gamma, {}, false, false, true);
    double worst = 0.0;
    for (const auto& gr : grads)
      if (gr.defined()) worst = std::max(worst, gr.abs().max().item<double>());
    return worst;
  };
  const auto solo = g->render_solo(batch, index);
  // Only the target depends on Gamma here: the image path is cut.
  const auto predicted = d->forward(solo.image.detach()).pose;
  const double stopped = largest(loss_position(solo.target, predicted));
  const auto solo2 = g->render_solo(batch, index);
  const double live = largest((solo2.target - predicted.detach()).pow(2).sum(-1).mean());
  return {stopped, live};
}

// ---- Rendering ----------------------------------------------------------

std::pair<std::int64_t, std::int64_t> window_sparsity(const ModelConfig& cfg, std::uint64_t seed) {
  Renderer r(cfg);
  randomize(*r, seed, 0.3);
  Rng rng(seed + 1);
  std::vector<double> z;
  for (int i = 0; i < cfg.foreground_dim; ++i) z.push_back(rng.uniform(-1.0, 1.0));
  torch::NoGradGuard guard;
  const auto grid = decode_foreground(z, r).grid;
  const auto H = cfg.canvas_side;
  const auto lo = (H - cfg.window_side) / 2;
  auto inside = torch::zeros({H, H}, torch::kBool);
  inside.slice(0, lo, lo + cfg.window_side).slice(1, lo, lo + cfg.window_side).fill_(true);
  const auto nonzero_site = (grid != 0).any(0);
  const auto stray = (nonzero_site & ~inside).sum().item<std::int64_t>();
  const auto zeros = (~nonzero_site).sum().item<std::int64_t>();
  return {stray, zeros};
}

double integer_shift_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto canvas = random_tensor(rng, {3, 8, 8}, 1.0, torch::kFloat32);
  double worst = 0.0;
  for (int sx = -9; sx <= 9; sx += 3)
    for (int sy = -5; sy <= 5; ++sy) {
      const auto theta = torch::tensor({{sx / 4.0, sy / 4.0}}, torch::kFloat32);
      const auto got = translate_canvases(canvas.unsqueeze(0), theta).select(0, 0);
      auto want = torch::zeros_like(canvas);
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) {
          const auto ys = y + sy, xs = x + sx;
          if (ys >= 0 && ys < 8 && xs >= 0 && xs < 8) want.select(1, y).select(1, x).copy_(canvas.select(1, ys).select(1, xs));
        }
      worst = std::max(worst, (got - want).abs().max().item<double>());
    }
  return worst;
}

double fractional_shift_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto canvas = random_tensor(rng, {3, 8, 8}, 1.0, torch::kFloat32);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const double tx = rng.uniform(-1.2, 1.2);
    const double ty = rng.uniform(-1.2, 1.2);
    const auto theta = torch::tensor({{tx, ty}}, torch::kFloat64).to(torch::kFloat32);
    const auto got = translate_canvases(canvas.unsqueeze(0), theta).select(0, 0).to(torch::kFloat64);
    // The reference uses the same single-precision pose the module saw.
    const double fx = theta[0][0].item<double>(), fy = theta[0][1].item<double>();
    worst = std::max(worst, (got - shift_reference(canvas, fx * 4.0, fy * 4.0)).abs().max().item<double>());
  }
  return worst;
}

bool pooling_permutation_exact(Pooling pooling, std::uint64_t seed) {
  Rng rng(seed);
  const auto canvases = random_tensor(rng, {2, 5, 4, 6, 6}, 1.0, torch::kFloat32);
  const auto mask = torch::tensor({{1.f, 1.f, 0.f, 1.f, 1.f}, {1.f, 1.f, 1.f, 1.f, 1.f}});
  const auto base = pool_canvases(canvases, mask, pooling);
  for (const auto& perm : permutations(5, seed)) {
    const auto idx = torch::tensor(std::vector<std::int64_t>(perm.begin(), perm.end()), torch::kLong);
    if (!torch::equal(pool_canvases(canvases.index_select(1, idx), mask.index_select(1, idx), pooling), base))
      return false;
  }
  return true;
}

bool unit_scale_identical(std::uint64_t seed) {
  const auto cfg = tiny_config();
  Renderer r(cfg);
  randomize(*r, seed, 0.3);
  Rng rng(seed + 1);
  auto scene = random_scene(rng, cfg, 3);
  for (auto& o : scene.objects) o.theta = o.theta_hat;
  RenderOptions unit;
  unit.window_sides.assign(3, static_cast<double>(cfg.window_side));
  const bool images = torch::equal(render_scene(scene, r), render_scene(scene, r, unit));
  torch::NoGradGuard guard;
  const auto a = decode_foreground(scene.objects[0].z, r).grid;
  const auto b = decode_foreground(scene.objects[0].z, r, static_cast<double>(cfg.window_side)).grid;
  return images && torch::equal(a, b);
}

// ---- Metrics --------------------------------------------------------------

double frechet_self_distance(std::uint64_t seed) {
  Rng rng(seed);
  const auto f = random_tensor(rng, {500, 16});
  return frechet_distance(f, f).distance;
}

double gaussian_frechet_error(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto a = random_tensor(rng, {n, 1});
  const auto b = random_tensor(rng, {n, 1}) + 1.0;
  return std::abs(frechet_distance(a, b).distance - 1.0);
}

double disc_oracle_median(std::uint64_t seed) {
  auto cfg = tiny_config();
  cfg.image_side = 64;
  cfg.canvas_side = 16;
  cfg.window_side = 8;
  return disentanglement_score(disc_oracle_model(cfg), 100, 3, seed).median;
}

// ---- Persistence --------------------------------------------------------

namespace {

TrainConfig tiny_train(std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.adam_beta1 = 0.5;
  t.generator_steps = 2;
  t.batch_size = 4;
  t.seed = seed;
  return t;
}

torch::Tensor real_batch(const ModelConfig& cfg, int step) {
  Rng rng(1000 + static_cast<std::uint64_t>(step));
  return torch::tanh(random_tensor(rng, {4, 3 * cfg.clip_length, cfg.image_side, cfg.image_side}, 1.0, torch::kFloat32));
}

bool same_tensors(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].first != b.tensors[i].first || !torch::equal(a.tensors[i].second, b.tensors[i].second))
      return false;
  return true;
}

}  // namespace

bool checkpoint_round_trip(const std::filesystem::path& dir) {
  auto state = make_state(tiny_config(), tiny_train(3));
  for (int s = 0; s < 2; ++s) train_step(state, real_batch(state.model, s));
  const auto ckpt = to_checkpoint(state);
  const auto bytes = encode_checkpoint(ckpt);
  if (encode_checkpoint(decode_checkpoint(bytes)) != bytes) return false;
  std::filesystem::create_directories(dir);
  save_checkpoint(ckpt, dir / "a.ckpt");
  const auto reloaded = from_checkpoint(load_checkpoint(dir / "a.ckpt"));
  return encode_checkpoint(to_checkpoint(reloaded)) == bytes;
}

bool train_reproducible(int steps) {
  const auto run = [&] {
    auto state = make_state(tiny_config(), tiny_train(7));
    std::vector<double> trace;
    for (int s = 0; s < steps; ++s) {
      const auto m = train_step(state, real_batch(state.model, s));
      trace.insert(trace.end(), {m.d_loss, m.g_loss, m.style_loss, m.pos_loss});
    }
    trace.push_back(parameter_checksum(*state.generator));
    trace.push_back(parameter_checksum(*state.discriminator));
    return trace;
  };
  return run() == run();
}

bool resume_equals_continuous(int steps, int split) {
  auto continuous = make_state(tiny_config(), tiny_train(9));
  for (int s = 0; s < steps; ++s) train_step(continuous, real_batch(continuous.model, s));

  auto first = make_state(tiny_config(), tiny_train(9));
  for (int s = 0; s < split; ++s) train_step(first, real_batch(first.model, s));
  auto resumed = from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(first))));
  for (int s = split; s < steps; ++s) train_step(resumed, real_batch(resumed.model, s));

  const auto a = to_checkpoint(continuous);
  const auto b = to_checkpoint(resumed);
  return same_tensors(a, b) && a.metadata == b.metadata;
}

}  // namespace relate::checks
