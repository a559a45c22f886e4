#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relate/config.hpp"
#include "relate/image_io.hpp"
#include "relate/latents.hpp"
#include "relate/rng.hpp"

namespace relate {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestSchema = "relate-dataset";

/// One training item: a single image (static datasets) or a frame sequence.
/// Object centers are ground truth in the pose frame (pose_to_pixel maps
/// them to image coordinates) and are never handed to the trainer.
struct ManifestItem {
  std::string id;
  std::vector<std::string> frames;          // paths relative to the manifest directory
  std::vector<std::vector<Pose>> centers;   // [frame][object]
  int count = 0;
};

/// manifest.json, next to an images/ directory:
///   {"schema": "relate-dataset", "version": 1, "name", "variant", "image_side",
///    "seed", "split", "k_min", "k_max",
///    "items": [{"id", "count", "frames": [path...], "centers": [[[x, y]...]...]}]}
struct DatasetManifest {
  std::string name;
  Variant variant = Variant::kGeneral;
  int image_side = 0;
  std::uint64_t seed = 0;
  std::string split = "train";
  int k_min = 1;
  int k_max = 1;
  std::vector<ManifestItem> items;
  std::filesystem::path root;  // directory holding manifest.json

  int frames_per_item() const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
/// Checks schema, version and the center/count invariants; `root` is used to
/// resolve frame paths. Throws DatasetCorrupt.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);
void save_manifest(const DatasetManifest& m);
/// Loads `path` (a manifest.json or the directory holding one) and checks
/// that every referenced frame exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

// ---- Rasterizer ----------------------------------------------------------

using Rgb = std::array<double, 3>;  // components in [0, 1]

/// Float RGB canvas drawn at `supersample` times the output side and
/// box-filtered down. Shape coordinates are normalized, x right and y down,
/// with [-1, 1] spanning the image.
class Raster {
 public:
  Raster(int side, int supersample = 4);

  void fill(const Rgb& c);
  void disc(double cx, double cy, double r, const Rgb& c);
  /// Axis-aligned rectangle given by center and half extents.
  void rect(double cx, double cy, double hx, double hy, const Rgb& c);
  /// Rotated ellipse, shaded radially from `center_color` to `edge_color`.
  void shaded_ellipse(double cx, double cy, double a, double b, double angle, const Rgb& center_color,
                      const Rgb& edge_color);
  Image8 resolve() const;

 private:
  template <typename Inside>
  void paint(double x0, double y0, double x1, double y1, Inside inside);
  double to_fine(double u) const;
  double from_fine(double px) const;

  int side_;
  int ss_;
  int fine_;
  std::vector<Rgb> px_;
};

// ---- Balls in a bowl -----------------------------------------------------

struct Ball {
  Pose p;  // normalized image coordinates, y down
  Pose v;
  Rgb color;
};

/// Balls under a quadratic potential centred in an elliptical bowl. Motion
/// between contacts follows the exact harmonic flow; contacts with the rim
/// and between balls lose energy through the restitution coefficient.
/// Centers stay inside the ellipse with semi-axes shrunk by the ball radius.
struct PhysicsWorld {
  double cx = 0.0, cy = 0.0;  // bowl center
  double a = 0.8, b = 0.6;    // semi-axes
  double angle = 0.0;         // orientation (radians)
  double gravity = 40.0;      // pull toward the bowl center per unit distance
  double restitution = 0.8;
  double dt = 1.0 / 30.0;
  int substeps = 8;
  double radius = 0.15;
  std::vector<Ball> balls;

  /// Bowl-frame coordinates of an image-frame point.
  Pose to_bowl(Pose p) const;
  /// (x/a)^2 + (y/b)^2 in the bowl frame.
  double ellipse_value(Pose p) const;
  /// Same with the semi-axes shrunk by the ball radius.
  double inner_value(Pose p) const;
  double kinetic_energy() const;
  double potential_energy() const;
  double energy() const { return kinetic_energy() + potential_energy(); }
  /// True when every center is inside the inner ellipse and every pair is at least 2r apart.
  bool valid() const;

  void step();

  static PhysicsWorld random(Rng& rng, int n_balls);
};

// ---- Traffic -------------------------------------------------------------

struct Car {
  int lane = 0;
  double s = 0.0;      // position along the lane, cyclic in [-1, 1)
  double speed = 0.0;  // distance per frame
  double free_speed = 0.0;
  Rgb color;
};

/// Four one-way lanes on two crossing roads. Cars follow the car ahead with a
/// minimum gap; there are no traffic lights.
struct TrafficWorld {
  static constexpr int kLanes = 4;
  static constexpr double kLaneLength = 2.0;
  double car_length = 0.22;
  double car_width = 0.12;
  double min_gap = 0.06;
  double accel = 0.004;
  double turn_probability = 0.3;
  std::vector<Car> cars;

  /// Image-frame center of a car.
  Pose center(const Car& c) const;
  /// Lane direction as a unit vector.
  static Pose direction(int lane);
  /// Gap from `i` forward to the next car in the same lane (bumper to bumper);
  /// +inf when alone.
  double headway(std::size_t i) const;
  /// Cyclic lane coordinate where `from` crosses lane `to`, if they cross.
  static std::optional<std::pair<double, double>> crossing(int from, int to);

  void step(Rng& rng);

  static TrafficWorld random(Rng& rng, int n_cars);
};

/// Wraps a lane coordinate into [-1, 1).
double wrap_lane(double s);

// ---- Generators ----------------------------------------------------------

/// Writes `out_dir`/manifest.json and `out_dir`/images/. `frames_per_seq` = 1
/// produces a static (general-variant) dataset of single frames.
DatasetManifest gen_balls_in_bowl(std::uint64_t seed, int n_sequences, int frames_per_seq, int image_side,
                                  const std::filesystem::path& out_dir, const std::string& split = "train");
DatasetManifest gen_stacks(std::uint64_t seed, int n_images, int image_side, const std::filesystem::path& out_dir,
                           const std::string& split = "train");
DatasetManifest gen_traffic_like(std::uint64_t seed, int n_sequences, int frames_per_seq, int image_side,
                                 const std::filesystem::path& out_dir, const std::string& split = "train");

/// Dataset names accepted by generate_dataset: balls_in_bowl, stacks, traffic.
std::vector<std::string> dataset_names();
/// Train and test splits under out_dir/train and out_dir/test, generated from
/// independent sub-seeds with disjoint item ids.
std::pair<DatasetManifest, DatasetManifest> generate_dataset(const std::string& name, std::uint64_t seed,
                                                             int n_train, int n_test, int frames_per_seq,
                                                             int image_side, const std::filesystem::path& out_dir);

// ---- Loading -------------------------------------------------------------

/// Deterministic shuffled stream of [B, 3 * clip_len, S, S] batches in [-1, 1].
/// Every epoch visits each item once in an order drawn from (seed, epoch);
/// a trailing partial batch is dropped. Frames are decoded up front.
class BatchLoader {
 public:
  BatchLoader(const DatasetManifest& manifest, int batch_size, int clip_len, std::uint64_t seed);

  torch::Tensor next();
  std::int64_t batches_per_epoch() const;
  std::int64_t epoch() const { return epoch_; }
  std::int64_t position() const { return position_; }
  /// Jumps to a stream position previously reported by epoch()/position().
  void seek(std::int64_t epoch, std::int64_t position);
  int image_side() const { return side_; }
  std::int64_t items() const { return static_cast<std::int64_t>(clips_.size()); }
  /// All frames of item i as [F, 3, S, S] uint8.
  const torch::Tensor& item_frames(std::int64_t i) const { return clips_[static_cast<std::size_t>(i)]; }

 private:
  void plan_epoch();

  std::vector<torch::Tensor> clips_;
  int batch_size_;
  int clip_len_;
  std::uint64_t seed_;
  int side_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t position_ = 0;
  std::vector<std::int64_t> order_;
  std::vector<std::int64_t> starts_;
};

/// Loads every frame of every item, [F, 3, S, S] float32 in [-1, 1] each.
std::vector<torch::Tensor> load_all_frames(const DatasetManifest& manifest);

}  // namespace relate
