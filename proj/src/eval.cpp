#include "relate/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "relate/nn.hpp"

namespace relate {
namespace {

constexpr int kEmbedSide = 64;
constexpr std::int64_t kChunk = 50;
constexpr std::uint64_t kTestClipStream = 0x7e57c11b5ULL;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix to_matrix(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  Matrix m(c.size(0), c.size(1));
  const double* p = c.data_ptr<double>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = p[i * m.cols() + j];
  return m;
}

std::pair<Vector, Matrix> moments(const Matrix& x) {
  const Vector mu = x.colwise().mean();
  const Matrix centered = x.rowwise() - mu.transpose();
  return {mu, (centered.transpose() * centered) / static_cast<double>(x.rows() - 1)};
}

Matrix sym_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

torch::Tensor load_frame(const DatasetManifest& m, const std::string& rel) {
  return to_tensor(read_png(m.root / rel));
}

std::string kind_name(EmbedderKind k) {
  return k == EmbedderKind::kFixedRandomConv ? "fixed-random-conv" : "trained-probe";
}

/// Cone of height 1 at `center` (pixels), radius `r`.
void paint_cone(torch::Tensor& img, std::pair<double, double> center, double r) {
  const auto side = img.size(1);
  auto acc = img.accessor<float, 3>();
  for (std::int64_t y = 0; y < side; ++y) {
    for (std::int64_t x = 0; x < side; ++x) {
      const double d = std::hypot(x + 0.5 - center.first, y + 0.5 - center.second);
      const double v = std::max(0.0, 1.0 - d / r) * 2.0 - 1.0;
      for (int c = 0; c < 3; ++c) acc[c][y][x] = std::max(acc[c][y][x], static_cast<float>(v));
    }
  }
}

}  // namespace

nlohmann::json to_json(const EmbedderSpec& spec) {
  return {{"kind", kind_name(spec.kind)}, {"seed", spec.seed}, {"dim", spec.dim}};
}

Embedder::Embedder(const EmbedderSpec& spec) : spec_(spec) {
  if (spec.kind != EmbedderKind::kFixedRandomConv)
    throw std::invalid_argument("only the fixed-random-conv embedder is available");
  if (spec.dim < 1) throw std::invalid_argument("embedding dimension must be positive");
  Rng rng(spec.seed);
  const std::vector<std::int64_t> widths{3, 32, 64, 128, 128};
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    auto w = torch::empty({widths[l + 1], widths[l], 4, 4});
    fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(widths[l] * 16)));
    auto b = torch::empty({widths[l + 1]});
    fill_normal(b, rng, 0.1);
    conv_weights_.push_back(w);
    conv_biases_.push_back(b);
  }
  const std::int64_t flat = widths.back() * 4;
  projection_ = torch::empty({flat, spec.dim});
  fill_normal(projection_, rng, 1.0 / std::sqrt(static_cast<double>(flat)));
}

torch::Tensor Embedder::embed(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) throw std::invalid_argument("embed: expected [N, 3, S, S]");
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += kChunk) {
    auto h = images.slice(0, i, std::min(images.size(0), i + kChunk)).to(torch::kFloat32);
    if (h.size(2) != kEmbedSide || h.size(3) != kEmbedSide)
      h = torch::nn::functional::interpolate(h, torch::nn::functional::InterpolateFuncOptions()
                                                    .size(std::vector<std::int64_t>{kEmbedSide, kEmbedSide})
                                                    .mode(torch::kBilinear)
                                                    .align_corners(false));
    for (std::size_t l = 0; l < conv_weights_.size(); ++l)
      h = torch::relu(torch::conv2d(h, conv_weights_[l], conv_biases_[l], 2, 1));
    h = torch::adaptive_avg_pool2d(h, {2, 2}).flatten(1);
    out.push_back(h.matmul(projection_).to(torch::kFloat64));
  }
  return torch::cat(out, 0);
}

FrechetResult frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b) {
  if (feats_a.dim() != 2 || feats_b.dim() != 2) throw std::invalid_argument("frechet_distance: expected [N, D] features");
  if (feats_a.size(1) != feats_b.size(1)) throw std::invalid_argument("frechet_distance: feature dimensions differ");
  if (feats_a.size(0) < 2 || feats_b.size(0) < 2)
    throw std::invalid_argument("frechet_distance: need at least 2 feature vectors per side");
  auto [mu_a, cov_a] = moments(to_matrix(feats_a));
  auto [mu_b, cov_b] = moments(to_matrix(feats_b));
  FrechetResult r;
  const auto min_eig = [](const Matrix& m) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  };
  if (min_eig(cov_a) < kFrechetEpsilon || min_eig(cov_b) < kFrechetEpsilon) {
    const auto eps = kFrechetEpsilon * Matrix::Identity(cov_a.rows(), cov_a.cols());
    cov_a += eps;
    cov_b += eps;
    r.regularized = true;
  }
  const Matrix root_a = sym_sqrt(cov_a);
  const Matrix inner = root_a * cov_b * root_a;
  const double cross = Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .cwiseMax(0.0)
                           .cwiseSqrt()
                           .sum();
  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  r.distance = std::max(0.0, d);
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"metric", metric}, {"value", value}, {"n", n}, {"seeds", seeds}};
  if (embedder_used) j["embedder"] = relate::to_json(embedder);
  j["regularization"] = {{"epsilon", kFrechetEpsilon}, {"applied", regularized}};
  j["warnings"] = warnings;
  if (!extra.empty()) j["details"] = extra;
  return j;
}

torch::Tensor sample_images(const GeneratorModel& model, std::int64_t n, std::uint64_t seed) {
  if (model->config.variant == Variant::kDynamic)
    return sample_clips(model, n, 1, seed).select(1, 0);
  torch::NoGradGuard guard;
  auto rng = Rng::for_stream(seed, 0);
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < n; i += kChunk) {
    const int b = static_cast<int>(std::min(kChunk, n - i));
    out.push_back(model->forward(sample_scene_batch(rng, model->config, b, std::nullopt, 0.5)));
  }
  return torch::cat(out, 0);
}

torch::Tensor sample_clips(const GeneratorModel& model, std::int64_t n, int clip_len, std::uint64_t seed) {
  if (clip_len < 1) throw std::invalid_argument("clip length must be positive");
  if (model->config.variant != Variant::kDynamic && clip_len > 1)
    throw std::invalid_argument("clips need a dynamic model");
  torch::NoGradGuard guard;
  auto rng = Rng::for_stream(seed, 0);
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < n; i += kChunk) {
    const int b = static_cast<int>(std::min(kChunk, n - i));
    const auto batch = sample_scene_batch(rng, model->config, b, std::nullopt, 0.5);
    out.push_back(model->render_frames(batch, model->trajectory(batch, clip_len), batch.mask));
  }
  return torch::cat(out, 0);
}

torch::Tensor manifest_images(const DatasetManifest& manifest) {
  if (manifest.items.empty()) throw std::invalid_argument("manifest has no items");
  std::vector<torch::Tensor> out;
  out.reserve(manifest.items.size());
  for (const auto& item : manifest.items) out.push_back(load_frame(manifest, item.frames.front()));
  return torch::stack(out);
}

torch::Tensor manifest_clips(const DatasetManifest& manifest, std::int64_t n, int clip_len, std::uint64_t seed) {
  if (clip_len < 1 || clip_len > manifest.frames_per_item())
    throw std::invalid_argument("clip length exceeds the dataset's sequence length");
  const auto count = std::min<std::int64_t>(n, static_cast<std::int64_t>(manifest.items.size()));
  if (count < 1) throw std::invalid_argument("manifest has no items");
  auto rng = Rng::for_stream(seed, 0);
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto& item = manifest.items[static_cast<std::size_t>(i)];
    const int start = rng.uniform_int(0, static_cast<int>(item.frames.size()) - clip_len);
    std::vector<torch::Tensor> frames;
    for (int t = 0; t < clip_len; ++t) frames.push_back(load_frame(manifest, item.frames[static_cast<std::size_t>(start + t)]));
    out.push_back(torch::stack(frames));
  }
  return torch::stack(out);
}

torch::Tensor clip_features(const Embedder& embedder, const torch::Tensor& clips) {
  if (clips.dim() != 5 || clips.size(2) != 3) throw std::invalid_argument("clip_features: expected [N, T, 3, S, S]");
  const auto N = clips.size(0);
  const auto T = clips.size(1);
  const auto e = embedder.embed(clips.reshape({N * T, 3, clips.size(3), clips.size(4)})).reshape({N, T, -1});
  const auto change = T > 1 ? (e.slice(1, 1) - e.slice(1, 0, T - 1)).abs().mean(1) : torch::zeros_like(e.select(1, 0));
  return torch::cat({e.mean(1), std::get<0>(e.max(1)), change}, 1);
}

MetricReport fid_proxy(const GeneratorModel& model, const DatasetManifest& test, std::int64_t n_samples,
                       const EmbedderSpec& spec, std::uint64_t seed) {
  if (test.image_side != model->config.image_side)
    throw std::invalid_argument("test images and model output differ in size");
  const Embedder embedder(spec);
  const auto fake = embedder.embed(sample_images(model, n_samples, seed));
  const auto real = embedder.embed(manifest_images(test));
  const auto fd = frechet_distance(fake, real);
  MetricReport r;
  r.metric = "fid_proxy";
  r.value = fd.distance;
  r.n = n_samples;
  r.seeds = {{"sampling", seed}, {"embedder", spec.seed}};
  r.embedder = spec;
  r.regularized = fd.regularized;
  r.extra = {{"test_items", test.items.size()}};
  if (n_samples < kMinStableSamples) r.warnings.push_back("fewer than 100 samples: covariance estimate is unstable");
  return r;
}

MetricReport fvd_of_clips(const torch::Tensor& clips, const DatasetManifest& test, int clip_len,
                          const EmbedderSpec& spec, std::uint64_t seed, const std::string& metric) {
  const Embedder embedder(spec);
  const auto real = manifest_clips(test, static_cast<std::int64_t>(test.items.size()), clip_len,
                                   splitmix64(seed ^ kTestClipStream));
  const auto fd = frechet_distance(clip_features(embedder, clips), clip_features(embedder, real));
  MetricReport r;
  r.metric = metric;
  r.value = fd.distance;
  r.n = clips.size(0);
  r.seeds = {{"sampling", seed}, {"embedder", spec.seed}};
  r.embedder = spec;
  r.regularized = fd.regularized;
  r.extra = {{"clip_len", clip_len}, {"test_clips", real.size(0)}};
  if (r.n < kMinStableSamples) r.warnings.push_back("fewer than 100 clips: covariance estimate is unstable");
  return r;
}

MetricReport fvd_proxy(const GeneratorModel& model, const DatasetManifest& test, std::int64_t n_videos, int clip_len,
                       const EmbedderSpec& spec, std::uint64_t seed) {
  if (model->config.variant != Variant::kDynamic) throw std::invalid_argument("fvd_proxy needs a dynamic model");
  if (test.image_side != model->config.image_side)
    throw std::invalid_argument("test images and model output differ in size");
  return fvd_of_clips(sample_clips(model, n_videos, clip_len, seed), test, clip_len, spec, seed, "fvd_proxy");
}

torch::Tensor time_shuffle_baseline(const DatasetManifest& manifest, std::int64_t n_videos, int clip_len,
                                    std::uint64_t seed) {
  auto clips = manifest_clips(manifest, n_videos, clip_len, seed);
  for (std::int64_t c = 0; c < clips.size(0); ++c) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(c) + 1);
    std::vector<std::int64_t> order(static_cast<std::size_t>(clip_len));
    for (int t = 0; t < clip_len; ++t) order[static_cast<std::size_t>(t)] = t;
    for (int t = clip_len - 1; t > 0; --t) std::swap(order[static_cast<std::size_t>(t)], order[static_cast<std::size_t>(rng.uniform_int(0, t))]);
    clips[c] = clips[c].index_select(0, torch::tensor(order, torch::kLong));
  }
  return clips;
}

ProbeModel probe_model(const GeneratorModel& model) {
  ProbeModel p;
  p.image_side = model->config.image_side;
  p.sample = [model](Rng& rng, int K) { return corrected(sample_scene(rng, model->config, K), model); };
  p.render = [model](const LatentScene& scene, const std::vector<bool>& visible) {
    RenderOptions opts;
    opts.visible = visible;
    return render_latent_scene(model, scene, opts);
  };
  return p;
}

ProbeModel disc_oracle_model(const ModelConfig& cfg, double radius_px) {
  ProbeModel p;
  p.image_side = cfg.image_side;
  p.sample = [cfg](Rng& rng, int K) {
    auto scene = sample_scene(rng, cfg, K);
    for (auto& o : scene.objects) o.theta = o.theta_hat;
    return scene;
  };
  p.render = [side = cfg.image_side, radius_px](const LatentScene& scene, const std::vector<bool>& visible) {
    auto img = torch::full({3, side, side}, -1.0f);
    for (int k = 0; k < scene.K(); ++k)
      if (visible[static_cast<std::size_t>(k)]) paint_cone(img, pose_to_pixel(*scene.objects[static_cast<std::size_t>(k)].theta, side), radius_px);
    return img;
  };
  return p;
}

ProbeModel pose_blind_model(const ModelConfig& cfg, double radius_px) {
  ProbeModel p;
  p.image_side = cfg.image_side;
  p.sample = [cfg](Rng& rng, int K) {
    auto scene = sample_scene(rng, cfg, K);
    for (auto& o : scene.objects) {
      o.theta = o.theta_hat;
      o.z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};  // where the disc actually goes
    }
    return scene;
  };
  p.render = [side = cfg.image_side, radius_px](const LatentScene& scene, const std::vector<bool>& visible) {
    auto img = torch::full({3, side, side}, -1.0f);
    for (int k = 0; k < scene.K(); ++k) {
      if (!visible[static_cast<std::size_t>(k)]) continue;
      const auto& z = scene.objects[static_cast<std::size_t>(k)].z;
      paint_cone(img, {(z[0] + 1.0) * 0.5 * side, (z[1] + 1.0) * 0.5 * side}, radius_px);
    }
    return img;
  };
  return p;
}

DisentanglementResult disentanglement_score(const ProbeModel& model, int n_scenes, int K, std::uint64_t seed) {
  if (n_scenes < 1 || K < 1) throw std::invalid_argument("disentanglement_score: need at least one scene and object");
  DisentanglementResult r;
  auto rng = Rng::for_stream(seed, 0);
  for (int s = 0; s < n_scenes; ++s) {
    const auto scene = model.sample(rng, K);
    const std::vector<bool> all(static_cast<std::size_t>(K), true);
    const auto full = model.render(scene, all).to(torch::kFloat64);
    for (int i = 0; i < K; ++i) {
      auto visible = all;
      visible[static_cast<std::size_t>(i)] = false;
      const auto diff = (full - model.render(scene, visible).to(torch::kFloat64)).abs().sum(0).contiguous();
      // argmax over a flat view returns the first maximum, i.e. the lowest row-major index.
      const auto flat = diff.flatten().argmax().item<std::int64_t>();
      const auto side = diff.size(1);
      const double px = static_cast<double>(flat % side) + 0.5;
      const double py = static_cast<double>(flat / side) + 0.5;
      const auto [tx, ty] = pose_to_pixel(*scene.objects[static_cast<std::size_t>(i)].theta, model.image_side);
      r.distances.push_back(std::hypot(px - tx, py - ty));
    }
  }
  r.median = median_of(r.distances);
  return r;
}

NullBaseline disentanglement_null(const ModelConfig& cfg, std::int64_t n_pairs, int trials, std::uint64_t seed) {
  if (n_pairs < 1 || trials < 1) throw std::invalid_argument("disentanglement_null: need positive sizes");
  auto rng = Rng::for_stream(seed, 0);
  const double side = cfg.image_side;
  std::vector<double> medians;
  std::vector<double> all;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> d(static_cast<std::size_t>(n_pairs));
    for (auto& v : d) {
      const Pose theta{rng.uniform(cfg.pose_x.lo, cfg.pose_x.hi), rng.uniform(cfg.pose_y.lo, cfg.pose_y.hi)};
      const auto [tx, ty] = pose_to_pixel(theta, cfg.image_side);
      const double px = std::floor(rng.uniform(0.0, side)) + 0.5;
      const double py = std::floor(rng.uniform(0.0, side)) + 0.5;
      v = std::hypot(px - tx, py - ty);
    }
    all.insert(all.end(), d.begin(), d.end());
    medians.push_back(median_of(std::move(d)));
  }
  std::sort(medians.begin(), medians.end());
  NullBaseline b;
  b.median = median_of(std::move(all));
  b.quantile05 = medians[static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(medians.size() - 1)))];
  return b;
}

MetricReport disentanglement_report(const GeneratorModel& model, int n_scenes, int K, std::uint64_t seed) {
  const auto score = disentanglement_score(probe_model(model), n_scenes, K, seed);
  const auto null = disentanglement_null(model->config, static_cast<std::int64_t>(score.distances.size()), 1000,
                                         splitmix64(seed + 1));
  MetricReport r;
  r.metric = "disentanglement_median_px";
  r.value = score.median;
  r.n = static_cast<std::int64_t>(score.distances.size());
  r.seeds = {{"sampling", seed}, {"null", splitmix64(seed + 1)}};
  r.embedder_used = false;
  r.extra = {{"scenes", n_scenes},
             {"objects_per_scene", K},
             {"null_median", null.median},
             {"null_median_q05", null.quantile05},
             {"below_null_95", score.median < null.quantile05}};
  return r;
}

}  // namespace relate
