#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include <json.hpp>

#include "relate/adversary.hpp"
#include "relate/checkpoint.hpp"
#include "relate/config.hpp"
#include "relate/data.hpp"
#include "relate/model.hpp"
#include "relate/rng.hpp"

namespace relate {

/// Loss values of one train_step. d_loss and style_loss come from the
/// discriminator update, g_loss and pos_loss from the last generator update.
struct StepMetrics {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double style_loss = 0.0;
  double pos_loss = 0.0;
  double wall_time = 0.0;
};

/// Everything needed to continue training exactly where it stopped.
struct TrainState {
  ModelConfig model;
  TrainConfig train;
  GeneratorModel generator{nullptr};
  Discriminator discriminator{nullptr};
  std::unique_ptr<torch::optim::Adam> generator_opt;
  std::unique_ptr<torch::optim::Adam> discriminator_opt;
  Rng rng;
  std::int64_t step = 0;
  std::int64_t discriminator_updates = 0;
  std::int64_t generator_updates = 0;
  std::int64_t data_epoch = 0;
  std::int64_t data_position = 0;
  /// Carried into checkpoints verbatim (creation info and the like).
  nlohmann::json info = nlohmann::json::object();
  /// Where a snapshot goes if a loss turns non-finite.
  std::filesystem::path diagnostics_dir = std::filesystem::temp_directory_path();
};

/// Builds all networks and optimizers and initializes weights from train.seed.
TrainState make_state(const ModelConfig& model, const TrainConfig& train);
/// N(0, 0.02) for every weight (normalization affine weights included), zero
/// biases, drawn from one stream seeded by `seed`: generator side first.
void init_weights(TrainState& state, std::uint64_t seed);

/// One discriminator update followed by M generator updates on a batch of
/// real samples [B, 3T, S, S]. Throws TrainingDiverged (after writing a
/// snapshot) if any loss is non-finite.
StepMetrics train_step(TrainState& state, const torch::Tensor& real);

ModelCheckpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const ModelCheckpoint& ckpt);
/// Generator side only, for inference; puts the modules in eval mode.
GeneratorModel generator_from_checkpoint(const ModelCheckpoint& ckpt);

struct TrainOptions {
  std::filesystem::path out_dir{};
  /// Continue from this state instead of initializing afresh.
  std::optional<ModelCheckpoint> resume{};
  /// Called after every step.
  std::function<void(const StepMetrics&)> on_step{};
};

/// Runs the configured number of epochs (capped by max_steps), appending
/// per-step losses to out_dir/metrics.csv, writing out_dir/checkpoint_<step>.ckpt
/// every checkpoint_every steps and out_dir/final.ckpt at the end.
ModelCheckpoint train(const DatasetManifest& data, const ModelConfig& model, const TrainConfig& train,
                      const TrainOptions& options);

/// Steps a full training run takes for this data and configuration.
std::int64_t planned_steps(const DatasetManifest& data, const TrainConfig& train);

}  // namespace relate
