#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relate/latents.hpp"
#include "relate/model.hpp"
#include "relate/rng.hpp"

namespace relate {

/// A corrected scene plus what the editor layers on top of it. Object indices
/// are positions in scene.objects; per-object vectors always have K entries.
struct SceneEditState {
  std::string session;
  LatentScene scene;
  std::vector<bool> visible;
  bool with_background = true;
  std::vector<std::optional<double>> scale_overrides;
  Rng rng;

  int K() const { return scene.K(); }
  /// Throws InvalidState if the per-object vectors disagree with K or a pose is missing.
  void check() const;
  friend bool operator==(const SceneEditState&, const SceneEditState&) = default;
};

/// Samples a scene (K from the model's range unless given) and corrects it.
SceneEditState new_edit_state(const GeneratorModel& model, std::uint64_t seed, std::optional<int> K = std::nullopt,
                              std::string session = {});
/// n states for sampling requests; state i is seeded from stream i of `seed`.
std::vector<SceneEditState> sample_edit_states(const GeneratorModel& model, int n, std::optional<int> K,
                                               std::uint64_t seed);
/// Wraps an existing scene; uncorrected objects are corrected by the model.
SceneEditState edit_state_from_scene(const GeneratorModel& model, LatentScene scene, std::uint64_t seed,
                                     std::string session = {});

enum class EditKind {
  kSetPose,
  kSetAppearance,
  kResampleAppearance,
  kSetBackground,
  kAddObject,
  kRemoveObject,
  kToggleVisible,
  kSetScale,
};

struct EditCommand {
  EditKind kind = EditKind::kSetPose;
  int k = 0;
  Pose theta;                     // set_pose
  std::vector<double> code;       // set_appearance; set_background (empty = resample)
  std::optional<double> window;   // set_scale; nullopt clears the override
};

/// Window side per object for rendering: override, else the model's
/// prediction when scale is enabled, else the configured H'. Empty when
/// nothing differs from H'.
std::vector<double> effective_window_sides(const GeneratorModel& model, const SceneEditState& state);
/// [3, S, S] in [-1, 1].
torch::Tensor render_edit_state(const GeneratorModel& model, const SceneEditState& state);

struct EditResult {
  SceneEditState state;
  torch::Tensor image;
};

/// Applies one command to a copy of `state` and renders the result. set_pose
/// bypasses the correction; add_object appends an object with a fresh code
/// and raw pose whose corrected pose comes from the model, leaving every
/// other object untouched. Throws std::invalid_argument for a bad index or
/// code length.
EditResult edit_scene(const GeneratorModel& model, const SceneEditState& state, const EditCommand& cmd);

// ---- JSON ---------------------------------------------------------------
//
// Pose: [x, y]. Scene:
//   {"z0": [..], "objects": [{"z": [..], "theta_hat": [x, y], "theta": [x, y] | null}]}
// Edit state:
//   {"session", "scene", "visible": [bool], "with_background": bool,
//    "scale_overrides": [number | null], "rng": string}
// Command:
//   {"op": "set_pose" | "set_appearance" | "resample_appearance" | "set_background" |
//          "add_object" | "remove_object" | "toggle_visible" | "set_scale",
//    "k": int, "theta": [x, y], "z": [..], "window": number | null}

/// Malformed JSON input; `field` names the offending member.
class BadRequest : public std::invalid_argument {
 public:
  BadRequest(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

nlohmann::json to_json(Pose p);
nlohmann::json to_json(const LatentScene& scene);
nlohmann::json to_json(const SceneEditState& state);
nlohmann::json to_json(const EditCommand& cmd);
Pose pose_from_json(const nlohmann::json& j, const std::string& field);
/// Checks code lengths against the model configuration.
LatentScene scene_from_json(const nlohmann::json& j, const ModelConfig& cfg);
SceneEditState edit_state_from_json(const nlohmann::json& j, const ModelConfig& cfg);
EditCommand command_from_json(const nlohmann::json& j);
std::string to_string(EditKind kind);

}  // namespace relate
