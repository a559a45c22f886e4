#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace relate {

enum class Pooling { kMax, kSum };
enum class Variant { kGeneral, kOrdered, kDynamic };

/// How the corrected pose is formed from the pose network output.
///  - kResidual: theta = theta_hat + zeta (full model)
///  - kIdentity: theta = theta_hat, no correction network (independent-objects ablation)
///  - kAbsolute: theta = zeta, skip connection removed ("w/o residual" ablation)
enum class CorrectionMode { kResidual, kIdentity, kAbsolute };

struct AxisRange {
  double lo = -1.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

/// Shapes and switches of the generative model. Everything needed to rebuild
/// every network is in here; checkpoints embed it verbatim.
struct ModelConfig {
  int background_dim = 3;   // N_b
  int foreground_dim = 1;   // N_f
  int canvas_side = 16;     // H
  int window_side = 8;      // H'
  int channels = 256;       // C
  int k_min = 2;
  int k_max = 2;
  AxisRange pose_x{-0.8, 0.8};
  AxisRange pose_y{-0.8, 0.8};
  int image_side = 128;
  Pooling pooling = Pooling::kMax;
  Variant variant = Variant::kGeneral;
  bool scale_enabled = false;
  CorrectionMode correction = CorrectionMode::kResidual;

  // Layer widths; defaults are the full-size architecture.
  int background_seed_channels = 256;
  int foreground_seed_channels = 512;
  int decoder_hidden_channels = 512;
  std::vector<int> generator_channels{128, 64, 64, 64};
  std::vector<int> discriminator_channels{64, 128, 256, 512, 1024};

  /// One learned foreground seed tensor per object slot instead of a shared one.
  bool per_object_seeds = false;
  int foreground_seed_slots = 1;
  /// Foreground style input is a constant vector of ones instead of z_k.
  bool constant_style = false;

  /// Frames per generated sample; 1 for static variants.
  int clip_length = 1;

  /// Number of stride-2 stages in the image generator.
  int generator_upsampling_stages() const;
  /// Number of leading discriminator layers run at stride 1 so the last
  /// feature map is 4x4.
  int discriminator_stride_one_layers() const;
  int discriminator_input_channels() const { return 3 * clip_length; }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class GeneratorLoss { kSaturating, kNonSaturating };

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  int generator_steps = 2;  // M
  int epochs = 1;
  /// 0 means an epoch is one full pass over the data.
  std::int64_t iterations_per_epoch = 0;
  /// Hard cap on discriminator updates; 0 disables the cap.
  std::int64_t max_steps = 0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  GeneratorLoss generator_loss = GeneratorLoss::kSaturating;
  bool position_regularizer = true;
  bool style_loss = true;
  std::int64_t checkpoint_every = 0;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Named configurations from the hyper-parameter tables, at full size
/// (H = 16, 128x128 images). Names: balls_in_bowl, clevr5, clevr5_vbg, clevr,
/// shapestacks, real_traffic, and the scale-augmented clevr3_scale,
/// clevr5_scale, clevr5_vbg_scale, clevr_scale, shapestacks_scale,
/// real_traffic_scale.
struct Preset {
  ModelConfig model;
  TrainConfig train;
};
Preset preset(std::string_view name);
std::vector<std::string> preset_names();

/// 64x64 output: drops the last stride-2 generator stage.
ModelConfig desk_scale(ModelConfig cfg);
/// 32x32 output with an 8x8 canvas and narrow layers, for CPU training runs.
ModelConfig toy_scale(ModelConfig cfg);
/// Dynamic variant of a static preset with `clip_length` frames.
Preset dynamic_variant(Preset p, int clip_length);

std::string to_string(Pooling p);
std::string to_string(Variant v);
std::string to_string(CorrectionMode m);
std::string to_string(GeneratorLoss g);
Pooling parse_pooling(std::string_view s);
Variant parse_variant(std::string_view s);
CorrectionMode parse_correction(std::string_view s);
GeneratorLoss parse_generator_loss(std::string_view s);

/// Human-readable `key = value` text, one entry per line, `#` comments.
/// Model keys are prefixed `model.`, training keys `train.`.
std::string to_config_text(const ModelConfig& model);
std::string to_config_text(const ModelConfig& model, const TrainConfig& train);

using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::string_view text);

/// Parses the `model.*` keys; missing keys keep their defaults, unknown
/// `model.*` keys are rejected.
ModelConfig model_config_from(const KeyValues& kv, ModelConfig base = {});
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});

}  // namespace relate
