#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relate/config.hpp"

namespace relate {

inline constexpr int kCheckpointVersion = 1;

/// On-disk model snapshot. The file is a POSIX tar archive holding
///   VERSION      format version as decimal text
///   config.txt   model.* and train.* keys (see to_config_text)
///   index.json   [{name, shape, file, offset, length}] for every tensor
///   meta.json    step counters, RNG and optimizer bookkeeping, creation info
///   tensors/NNNNNN.f32  one raw little-endian float32 blob per tensor
/// `offset` is the byte position of the blob inside the archive.
struct ModelCheckpoint {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  /// Tensor by name; throws CorruptCheckpoint if absent.
  const torch::Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

std::string encode_checkpoint(const ModelCheckpoint& ckpt);
/// Throws UnsupportedVersion or CorruptCheckpoint.
ModelCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Named parameters and buffers of `module`, prefixed with `prefix`.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module,
                                                               const std::string& prefix);
/// Copies tensors `prefix + name` from `ckpt` into the parameters and buffers
/// of `module`; every one must be present with a matching shape.
void load_state(torch::nn::Module& module, const ModelCheckpoint& ckpt, const std::string& prefix);

}  // namespace relate
