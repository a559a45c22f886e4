#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relate/data.hpp"
#include "relate/latents.hpp"
#include "relate/model.hpp"
#include "relate/rng.hpp"

namespace relate {

enum class EmbedderKind { kFixedRandomConv, kTrainedProbe };

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::kFixedRandomConv;
  std::uint64_t seed = 0;
  int dim = 256;
};

nlohmann::json to_json(const EmbedderSpec& spec);

/// Four stride-2 random convolutions over a 64x64 resize of the input,
/// then a fixed random projection of the 2x2-pooled last layer. Weights are
/// a pure function of the spec. Images are [N, 3, S, S] in [-1, 1].
class Embedder {
 public:
  explicit Embedder(const EmbedderSpec& spec);

  torch::Tensor embed(const torch::Tensor& images) const;  // [N, dim], float64
  const EmbedderSpec& spec() const { return spec_; }

 private:
  EmbedderSpec spec_;
  std::vector<torch::Tensor> conv_weights_;
  std::vector<torch::Tensor> conv_biases_;
  torch::Tensor projection_;
};

inline constexpr double kFrechetEpsilon = 1e-6;

struct FrechetResult {
  double distance = 0.0;
  /// eps * I was added to both covariances because one was singular.
  bool regularized = false;
};

/// Frechet distance between Gaussians fitted to two feature sets [N, D].
FrechetResult frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b);

/// Structured metric report.
struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::int64_t n = 0;
  nlohmann::json seeds = nlohmann::json::object();
  EmbedderSpec embedder;
  bool embedder_used = true;
  bool regularized = false;
  std::vector<std::string> warnings;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Fewer samples than this get an "unstable covariance" warning.
inline constexpr std::int64_t kMinStableSamples = 100;

/// Generated images [n, 3, S, S] for a static model, z0 drawn with half range 0.5.
torch::Tensor sample_images(const GeneratorModel& model, std::int64_t n, std::uint64_t seed);
/// Generated clips [n, T, 3, S, S] for a dynamic model.
torch::Tensor sample_clips(const GeneratorModel& model, std::int64_t n, int clip_len, std::uint64_t seed);

/// First frame of every test item, [N, 3, S, S].
torch::Tensor manifest_images(const DatasetManifest& manifest);
/// Up to n clips [n, T, 3, S, S]: one window per item, start drawn from `seed`.
torch::Tensor manifest_clips(const DatasetManifest& manifest, std::int64_t n, int clip_len, std::uint64_t seed);

/// Per-clip feature: per-frame embeddings pooled over time by mean and max,
/// plus the mean absolute frame-to-frame embedding change. The last block is
/// what makes the distance sensitive to frame order.
torch::Tensor clip_features(const Embedder& embedder, const torch::Tensor& clips);

MetricReport fid_proxy(const GeneratorModel& model, const DatasetManifest& test, std::int64_t n_samples,
                       const EmbedderSpec& spec, std::uint64_t seed);
MetricReport fvd_proxy(const GeneratorModel& model, const DatasetManifest& test, std::int64_t n_videos, int clip_len,
                       const EmbedderSpec& spec, std::uint64_t seed);
/// Frechet distance of an arbitrary clip set [n, T, 3, S, S] to the test clips.
MetricReport fvd_of_clips(const torch::Tensor& clips, const DatasetManifest& test, int clip_len,
                          const EmbedderSpec& spec, std::uint64_t seed, const std::string& metric);

/// Real clips of `manifest` with frames permuted within each clip; each clip
/// draws its permutation from its own sub-seed. [n, T, 3, S, S].
torch::Tensor time_shuffle_baseline(const DatasetManifest& manifest, std::int64_t n_videos, int clip_len,
                                    std::uint64_t seed);

// ---- Disentanglement ------------------------------------------------------

/// What the disentanglement probe needs from a model: corrected scenes and
/// renders with a per-object visibility mask ([3, S, S]).
struct ProbeModel {
  int image_side = 0;
  std::function<LatentScene(Rng&, int K)> sample;
  std::function<torch::Tensor(const LatentScene&, const std::vector<bool>& visible)> render;
};

ProbeModel probe_model(const GeneratorModel& model);
/// Paints a disc of radius `radius_px` at each object's pose on a flat background.
ProbeModel disc_oracle_model(const ModelConfig& cfg, double radius_px = 3.0);
/// Paints each disc where its appearance code says, ignoring the pose.
ProbeModel pose_blind_model(const ModelConfig& cfg, double radius_px = 3.0);

struct DisentanglementResult {
  double median = 0.0;
  std::vector<double> distances;  // one per (scene, object)
};

/// For each scene and object: |render(all) - render(all but i)| summed over
/// channels, argmax pixel (lowest row-major index on ties), distance in
/// pixels to the object's pose.
DisentanglementResult disentanglement_score(const ProbeModel& model, int n_scenes, int K, std::uint64_t seed);

struct NullBaseline {
  double median = 0.0;     // median distance of the null pairs
  double quantile05 = 0.0; // 5th percentile of the median over `n_pairs`-sized samples
};

/// Medians of distances between a pose drawn from the model's sampling range
/// and a uniformly random pixel, over `trials` samples of `n_pairs` pairs.
NullBaseline disentanglement_null(const ModelConfig& cfg, std::int64_t n_pairs, int trials, std::uint64_t seed);

MetricReport disentanglement_report(const GeneratorModel& model, int n_scenes, int K, std::uint64_t seed);

}  // namespace relate
