#include "relate/editing.hpp"

#include <stdexcept>

#include "relate/errors.hpp"

namespace relate {
namespace {

std::vector<double> uniform_code(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void check_index(const SceneEditState& s, int k) {
  if (k < 0 || k >= s.K())
    throw std::invalid_argument("object index " + std::to_string(k) + " out of range (K = " + std::to_string(s.K()) +
                                ")");
}

void check_code(const std::vector<double>& code, int expected, const char* what) {
  if (static_cast<int>(code.size()) != expected)
    throw std::invalid_argument(std::string(what) + " has length " + std::to_string(code.size()) + ", expected " +
                                std::to_string(expected));
}

std::vector<double> number_array(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw BadRequest(field, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw BadRequest(field, "expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

const nlohmann::json& member(const nlohmann::json& j, const std::string& key, const std::string& field) {
  if (!j.is_object()) throw BadRequest(field, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw BadRequest(field.empty() ? key : field + "." + key, "missing");
  return *it;
}

int int_member(const nlohmann::json& j, const std::string& key) {
  const auto& v = member(j, key, "");
  if (!v.is_number_integer()) throw BadRequest(key, "expected an integer");
  return v.get<int>();
}

}  // namespace

void SceneEditState::check() const {
  const auto n = static_cast<std::size_t>(K());
  if (visible.size() != n || scale_overrides.size() != n)
    throw InvalidState("edit state: per-object settings do not match the object count");
  if (!scene.corrected()) throw InvalidState("edit state: every object needs a corrected pose");
}

SceneEditState edit_state_from_scene(const GeneratorModel& model, LatentScene scene, std::uint64_t seed,
                                     std::string session) {
  check_code(scene.z0, model->config.background_dim, "z0");
  for (const auto& o : scene.objects) check_code(o.z, model->config.foreground_dim, "z");
  if (!scene.corrected()) {
    const auto fixed = corrected(scene, model);
    for (std::size_t k = 0; k < scene.objects.size(); ++k)
      if (!scene.objects[k].theta) scene.objects[k].theta = fixed.objects[k].theta;
  }
  SceneEditState s;
  s.session = std::move(session);
  s.scene = std::move(scene);
  s.visible.assign(static_cast<std::size_t>(s.K()), true);
  s.scale_overrides.assign(static_cast<std::size_t>(s.K()), std::nullopt);
  s.rng = Rng::for_stream(seed, 1);
  return s;
}

SceneEditState new_edit_state(const GeneratorModel& model, std::uint64_t seed, std::optional<int> K,
                              std::string session) {
  auto rng = Rng::for_stream(seed, 0);
  return edit_state_from_scene(model, sample_scene(rng, model->config, K), seed, std::move(session));
}

std::vector<SceneEditState> sample_edit_states(const GeneratorModel& model, int n, std::optional<int> K,
                                               std::uint64_t seed) {
  std::vector<SceneEditState> out;
  for (int i = 0; i < n; ++i)
    out.push_back(new_edit_state(model, Rng::for_stream(seed, static_cast<std::uint64_t>(i)).next_u64(), K));
  return out;
}

std::vector<double> effective_window_sides(const GeneratorModel& model, const SceneEditState& state) {
  bool any_override = false;
  for (const auto& o : state.scale_overrides) any_override = any_override || o.has_value();
  if (!any_override && !model->scale) return {};
  std::vector<double> sides = model->scale && state.K() > 0 ? predict_scales(state.scene, model->scale)
                                                            : std::vector<double>(static_cast<std::size_t>(state.K()),
                                                                                  model->config.window_side);
  for (std::size_t k = 0; k < sides.size(); ++k)
    if (state.scale_overrides[k]) sides[k] = *state.scale_overrides[k];
  return sides;
}

torch::Tensor render_edit_state(const GeneratorModel& model, const SceneEditState& state) {
  state.check();
  RenderOptions opts;
  opts.visible = state.visible;
  opts.with_background = state.with_background;
  opts.window_sides = effective_window_sides(model, state);
  return render_scene(state.scene, model->renderer, opts);
}

EditResult edit_scene(const GeneratorModel& model, const SceneEditState& state, const EditCommand& cmd) {
  state.check();
  const auto& cfg = model->config;
  auto s = state;
  auto& objects = s.scene.objects;
  const auto at = [&](int k) -> SceneObject& { return objects[static_cast<std::size_t>(k)]; };
  switch (cmd.kind) {
    case EditKind::kSetPose:
      check_index(s, cmd.k);
      at(cmd.k).theta = cmd.theta;
      break;
    case EditKind::kSetAppearance:
      check_index(s, cmd.k);
      check_code(cmd.code, cfg.foreground_dim, "z");
      at(cmd.k).z = cmd.code;
      break;
    case EditKind::kResampleAppearance:
      check_index(s, cmd.k);
      at(cmd.k).z = uniform_code(s.rng, cfg.foreground_dim);
      break;
    case EditKind::kSetBackground:
      if (cmd.code.empty()) {
        s.scene.z0 = uniform_code(s.rng, cfg.background_dim);
      } else {
        check_code(cmd.code, cfg.background_dim, "z0");
        s.scene.z0 = cmd.code;
      }
      break;
    case EditKind::kAddObject: {
      SceneObject obj;
      obj.z = uniform_code(s.rng, cfg.foreground_dim);
      const bool chained = cfg.variant == Variant::kOrdered && cfg.correction != CorrectionMode::kIdentity;
      if (!chained || objects.empty())
        obj.theta_hat = {s.rng.uniform(cfg.pose_x.lo, cfg.pose_x.hi), s.rng.uniform(cfg.pose_y.lo, cfg.pose_y.hi)};
      if (cfg.variant == Variant::kOrdered && !objects.empty()) {
        obj.theta = chain_next_pose(s.scene, model->ordered, obj.theta_hat);
        objects.push_back(obj);
      } else {
        objects.push_back(obj);
        objects.back().theta = corrected(s.scene, model).objects.back().theta;
      }
      s.visible.push_back(true);
      s.scale_overrides.push_back(std::nullopt);
      break;
    }
    case EditKind::kRemoveObject:
      check_index(s, cmd.k);
      objects.erase(objects.begin() + cmd.k);
      s.visible.erase(s.visible.begin() + cmd.k);
      s.scale_overrides.erase(s.scale_overrides.begin() + cmd.k);
      break;
    case EditKind::kToggleVisible:
      check_index(s, cmd.k);
      s.visible[static_cast<std::size_t>(cmd.k)] = !s.visible[static_cast<std::size_t>(cmd.k)];
      break;
    case EditKind::kSetScale:
      check_index(s, cmd.k);
      if (cmd.window && !(*cmd.window >= 1.0 && *cmd.window <= cfg.canvas_side))
        throw std::invalid_argument("window side must lie in [1, H]");
      s.scale_overrides[static_cast<std::size_t>(cmd.k)] = cmd.window;
      break;
  }
  auto image = render_edit_state(model, s);
  return {std::move(s), std::move(image)};
}

// ---- JSON ------------------------------------------------------------------

std::string to_string(EditKind kind) {
  switch (kind) {
    case EditKind::kSetPose: return "set_pose";
    case EditKind::kSetAppearance: return "set_appearance";
    case EditKind::kResampleAppearance: return "resample_appearance";
    case EditKind::kSetBackground: return "set_background";
    case EditKind::kAddObject: return "add_object";
    case EditKind::kRemoveObject: return "remove_object";
    case EditKind::kToggleVisible: return "toggle_visible";
    case EditKind::kSetScale: return "set_scale";
  }
  return "set_pose";
}

nlohmann::json to_json(Pose p) { return nlohmann::json::array({p.x, p.y}); }

nlohmann::json to_json(const LatentScene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects)
    objects.push_back({{"z", o.z},
                       {"theta_hat", to_json(o.theta_hat)},
                       {"theta", o.theta ? to_json(*o.theta) : nlohmann::json(nullptr)}});
  return {{"z0", scene.z0}, {"objects", objects}};
}

nlohmann::json to_json(const SceneEditState& state) {
  nlohmann::json overrides = nlohmann::json::array();
  for (const auto& o : state.scale_overrides) overrides.push_back(o ? nlohmann::json(*o) : nlohmann::json(nullptr));
  nlohmann::json visible = nlohmann::json::array();
  for (bool v : state.visible) visible.push_back(v);
  return {{"session", state.session},
          {"scene", to_json(state.scene)},
          {"visible", visible},
          {"with_background", state.with_background},
          {"scale_overrides", overrides},
          {"rng", state.rng.serialize()}};
}

nlohmann::json to_json(const EditCommand& cmd) {
  nlohmann::json j{{"op", to_string(cmd.kind)}, {"k", cmd.k}};
  if (cmd.kind == EditKind::kSetPose) j["theta"] = to_json(cmd.theta);
  if (cmd.kind == EditKind::kSetAppearance || (cmd.kind == EditKind::kSetBackground && !cmd.code.empty()))
    j["z"] = cmd.code;
  if (cmd.kind == EditKind::kSetScale) j["window"] = cmd.window ? nlohmann::json(*cmd.window) : nlohmann::json(nullptr);
  return j;
}

Pose pose_from_json(const nlohmann::json& j, const std::string& field) {
  const auto v = number_array(j, field);
  if (v.size() != 2) throw BadRequest(field, "expected [x, y]");
  return {v[0], v[1]};
}

LatentScene scene_from_json(const nlohmann::json& j, const ModelConfig& cfg) {
  LatentScene scene;
  scene.z0 = number_array(member(j, "z0", "scene"), "scene.z0");
  if (static_cast<int>(scene.z0.size()) != cfg.background_dim)
    throw BadRequest("scene.z0", "expected " + std::to_string(cfg.background_dim) + " components");
  const auto& objects = member(j, "objects", "scene");
  if (!objects.is_array()) throw BadRequest("scene.objects", "expected an array");
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto field = "scene.objects[" + std::to_string(k) + "]";
    SceneObject o;
    o.z = number_array(member(objects[k], "z", field), field + ".z");
    if (static_cast<int>(o.z.size()) != cfg.foreground_dim)
      throw BadRequest(field + ".z", "expected " + std::to_string(cfg.foreground_dim) + " components");
    o.theta_hat = objects[k].contains("theta_hat") ? pose_from_json(objects[k]["theta_hat"], field + ".theta_hat")
                                                    : Pose{};
    if (objects[k].contains("theta") && !objects[k]["theta"].is_null())
      o.theta = pose_from_json(objects[k]["theta"], field + ".theta");
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

SceneEditState edit_state_from_json(const nlohmann::json& j, const ModelConfig& cfg) {
  SceneEditState s;
  if (j.contains("session")) {
    if (!j["session"].is_string()) throw BadRequest("session", "expected a string");
    s.session = j["session"].get<std::string>();
  }
  s.scene = scene_from_json(member(j, "scene", ""), cfg);
  const auto n = static_cast<std::size_t>(s.K());
  if (!s.scene.corrected()) throw BadRequest("scene.objects", "every object needs a corrected pose (theta)");
  s.visible.assign(n, true);
  if (j.contains("visible")) {
    const auto& v = j["visible"];
    if (!v.is_array() || v.size() != n) throw BadRequest("visible", "expected one boolean per object");
    for (std::size_t k = 0; k < n; ++k) {
      if (!v[k].is_boolean()) throw BadRequest("visible", "expected one boolean per object");
      s.visible[k] = v[k].get<bool>();
    }
  }
  if (j.contains("with_background")) {
    if (!j["with_background"].is_boolean()) throw BadRequest("with_background", "expected a boolean");
    s.with_background = j["with_background"].get<bool>();
  }
  s.scale_overrides.assign(n, std::nullopt);
  if (j.contains("scale_overrides")) {
    const auto& v = j["scale_overrides"];
    if (!v.is_array() || v.size() != n) throw BadRequest("scale_overrides", "expected one entry per object");
    for (std::size_t k = 0; k < n; ++k) {
      if (v[k].is_null()) continue;
      if (!v[k].is_number()) throw BadRequest("scale_overrides", "expected numbers or null");
      s.scale_overrides[k] = v[k].get<double>();
    }
  }
  if (j.contains("rng")) {
    if (!j["rng"].is_string()) throw BadRequest("rng", "expected a string");
    try {
      s.rng = Rng::deserialize(j["rng"].get<std::string>());
    } catch (const std::exception& ex) {
      throw BadRequest("rng", ex.what());
    }
  }
  return s;
}

EditCommand command_from_json(const nlohmann::json& j) {
  const auto& op_json = member(j, "op", "");
  if (!op_json.is_string()) throw BadRequest("op", "expected a string");
  const auto op = op_json.get<std::string>();
  EditCommand c;
  static const std::vector<EditKind> kinds{EditKind::kSetPose,       EditKind::kSetAppearance, EditKind::kResampleAppearance,
                                           EditKind::kSetBackground, EditKind::kAddObject,     EditKind::kRemoveObject,
                                           EditKind::kToggleVisible, EditKind::kSetScale};
  bool found = false;
  for (auto k : kinds)
    if (to_string(k) == op) {
      c.kind = k;
      found = true;
    }
  if (!found) throw BadRequest("op", "unknown edit '" + op + "'");
  const bool indexed = c.kind != EditKind::kSetBackground && c.kind != EditKind::kAddObject;
  if (indexed) c.k = int_member(j, "k");
  switch (c.kind) {
    case EditKind::kSetPose: c.theta = pose_from_json(member(j, "theta", ""), "theta"); break;
    case EditKind::kSetAppearance: c.code = number_array(member(j, "z", ""), "z"); break;
    case EditKind::kSetBackground:
      if (j.contains("z") && !j["z"].is_null()) c.code = number_array(j["z"], "z");
      break;
    case EditKind::kSetScale: {
      const auto& w = member(j, "window", "");
      if (!w.is_null()) {
        if (!w.is_number()) throw BadRequest("window", "expected a number or null");
        c.window = w.get<double>();
      }
      break;
    }
    default: break;
  }
  return c;
}

}  // namespace relate
