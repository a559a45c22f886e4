#include "relate/service.hpp"

#include <httplib.h>
#include <sodium.h>

#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <regex>
#include <shared_mutex>
#include <stdexcept>
#include <thread>

#include "relate/errors.hpp"
#include "relate/image_io.hpp"
#include "relate/interaction.hpp"

namespace relate {
namespace {

constexpr int kMaxSamples = 64;
constexpr int kMaxFrames = 256;

ServiceResponse error(int status, const std::string& message, const std::string& field = {}) {
  nlohmann::json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, body};
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw BadRequest("body", "not valid JSON");
  if (!j.is_object()) throw BadRequest("body", "expected a JSON object");
  return j;
}

int int_field(const nlohmann::json& j, const std::string& key, int fallback, int lo, int hi) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number_integer()) throw BadRequest(key, "expected an integer");
  const auto v = j[key].get<std::int64_t>();
  if (v < lo || v > hi)
    throw BadRequest(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int>(v);
}

std::uint64_t seed_field(const nlohmann::json& j) {
  if (!j.contains("seed")) return 0;
  if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0))
    throw BadRequest("seed", "expected a non-negative integer");
  return j["seed"].get<std::uint64_t>();
}

nlohmann::json pose_lists(const std::vector<std::vector<Pose>>& frames) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& poses : frames) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& p : poses) f.push_back(to_json(p));
    out.push_back(f);
  }
  return out;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  const auto len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminator
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string out(text.size() / 4 * 3 + 3, '\0');
  std::size_t n = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(), nullptr, &n,
                        nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
    throw std::invalid_argument("malformed base64");
  out.resize(n);
  return out;
}

std::string image_payload(const torch::Tensor& chw) { return base64_encode(encode_png(to_image8(chw))); }

struct Session {
  std::mutex mutex;
  SceneEditState state;
};

struct StudioService::State {
  std::shared_mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::atomic<std::uint64_t> next_session{1};
  httplib::Server server;
  std::thread thread;
};

StudioService::StudioService(GeneratorModel model) : model_(std::move(model)), state_(std::make_unique<State>()) {
  if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialize");
  model_->eval();
  for (auto& p : model_->parameters()) p.set_requires_grad(false);

  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto& s = state_->server;
  s.Get(".*", route);
  s.Post(".*", route);
  s.Delete(".*", route);
  s.Put(".*", route);
}

StudioService::~StudioService() { stop(); }

int StudioService::start(const std::string& host, int port) {
  auto& s = state_->server;
  const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  state_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
  return bound;
}

void StudioService::listen(const std::string& host, int port) {
  if (!state_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void StudioService::stop() {
  state_->server.stop();
  if (state_->thread.joinable()) state_->thread.join();
}

ServiceResponse StudioService::handle(const std::string& method, const std::string& path,
                                      const std::string& body) const {
  static const std::regex session_path(R"(^/sessions/([A-Za-z0-9_-]+)$)");
  static const std::regex edit_path(R"(^/sessions/([A-Za-z0-9_-]+)/edit$)");
  const auto& cfg = model_->config;
  torch::NoGradGuard guard;

  // A request names its scene either as a full edit state or a bare scene.
  const auto scene_state = [&](const nlohmann::json& j) {
    if (j.contains("state")) return edit_state_from_json(j["state"], cfg);
    if (j.contains("scene")) return edit_state_from_scene(model_, scene_from_json(j["scene"], cfg), seed_field(j));
    throw BadRequest("state", "missing (send \"state\" or \"scene\")");
  };
  const auto find_session = [&](const std::string& id) -> std::shared_ptr<Session> {
    std::shared_lock lock(state_->sessions_mutex);
    const auto it = state_->sessions.find(id);
    return it == state_->sessions.end() ? nullptr : it->second;
  };
  const auto session_body = [&](const SceneEditState& s, const torch::Tensor& image) {
    return nlohmann::json{{"session", s.session}, {"state", to_json(s)}, {"image", image_payload(image)}};
  };

  try {
    std::smatch m;
    if (method == "GET" && path == "/health") {
      return {200,
              {{"status", "ok"},
               {"variant", to_string(cfg.variant)},
               {"image_side", cfg.image_side},
               {"background_dim", cfg.background_dim},
               {"foreground_dim", cfg.foreground_dim},
               {"k_min", cfg.k_min},
               {"k_max", cfg.k_max},
               {"canvas_side", cfg.canvas_side},
               {"window_side", cfg.window_side},
               {"scale_enabled", cfg.scale_enabled},
               {"dynamic", cfg.variant == Variant::kDynamic}}};
    }
    if (method == "POST" && path == "/sample") {
      const auto j = parse_body(body);
      const int n = int_field(j, "n", 1, 1, kMaxSamples);
      const int k = int_field(j, "k", 0, 1, 1 << 10);
      const auto seed = seed_field(j);
      nlohmann::json samples = nlohmann::json::array();
      for (const auto& s : sample_edit_states(model_, n, k > 0 ? std::optional<int>(k) : std::nullopt, seed))
        samples.push_back({{"state", to_json(s)}, {"image", image_payload(render_edit_state(model_, s))}});
      return {200, {{"samples", samples}}};
    }
    if (method == "POST" && path == "/components") {
      const auto s = scene_state(parse_body(body));
      const auto sides = effective_window_sides(model_, s);
      RenderOptions bg;
      bg.visible.assign(static_cast<std::size_t>(s.K()), false);
      bg.window_sides = sides;
      nlohmann::json objects = nlohmann::json::array();
      for (int k = 0; k < s.K(); ++k) {
        RenderOptions one;
        one.only_object = k;
        one.with_background = false;
        one.window_sides = sides;
        objects.push_back(image_payload(render_scene(s.scene, model_->renderer, one)));
      }
      return {200,
              {{"background", image_payload(render_scene(s.scene, model_->renderer, bg))},
               {"objects", objects},
               {"composite", image_payload(render_edit_state(model_, s))},
               {"state", to_json(s)}}};
    }
    if (method == "POST" && path == "/rollout") {
      const auto j = parse_body(body);
      if (!model_->dynamics) return error(409, "the loaded model is not dynamic");
      const int frames = int_field(j, "frames", cfg.clip_length, 1, kMaxFrames);
      const auto s = scene_state(j);
      const auto poses = rollout(s.scene, model_->dynamics, frames);
      nlohmann::json images = nlohmann::json::array();
      nlohmann::json pixels = nlohmann::json::array();
      for (const auto& frame : poses) {
        auto at = s;
        nlohmann::json px = nlohmann::json::array();
        for (std::size_t k = 0; k < frame.size(); ++k) {
          at.scene.objects[k].theta = frame[k];
          const auto [x, y] = pose_to_pixel(frame[k], cfg.image_side);
          px.push_back({x, y});
        }
        images.push_back(image_payload(render_edit_state(model_, at)));
        pixels.push_back(px);
      }
      return {200, {{"frames", images}, {"poses", pose_lists(poses)}, {"pixels", pixels}, {"state", to_json(s)}}};
    }
    if (method == "POST" && path == "/sessions") {
      const auto j = parse_body(body);
      char id[32];
      std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(state_->next_session++));
      auto session = std::make_shared<Session>();
      if (j.contains("state")) {
        session->state = edit_state_from_json(j["state"], cfg);
      } else {
        const int k = int_field(j, "k", 0, 1, 1 << 10);
        session->state = new_edit_state(model_, seed_field(j), k > 0 ? std::optional<int>(k) : std::nullopt);
      }
      session->state.session = id;
      const auto image = render_edit_state(model_, session->state);
      auto out = session_body(session->state, image);
      std::unique_lock lock(state_->sessions_mutex);
      state_->sessions.emplace(id, std::move(session));
      return {201, out};
    }
    if (std::regex_match(path, m, session_path)) {
      const std::string id = m[1];
      if (method == "DELETE") {
        std::unique_lock lock(state_->sessions_mutex);
        if (state_->sessions.erase(id) == 0) return error(404, "unknown session '" + id + "'");
        return {200, {{"deleted", id}}};
      }
      if (method != "GET") return error(404, "no route for " + method + " " + path);
      const auto session = find_session(id);
      if (!session) return error(404, "unknown session '" + id + "'");
      std::lock_guard lock(session->mutex);
      return {200, session_body(session->state, render_edit_state(model_, session->state))};
    }
    if (method == "POST" && std::regex_match(path, m, edit_path)) {
      const std::string id = m[1];
      const auto session = find_session(id);
      if (!session) return error(404, "unknown session '" + id + "'");
      const auto j = parse_body(body);
      if (!j.contains("command")) throw BadRequest("command", "missing");
      const auto cmd = command_from_json(j["command"]);
      std::lock_guard lock(session->mutex);
      EditResult r;
      try {
        r = edit_scene(model_, session->state, cmd);
      } catch (const BadRequest&) {
        throw;
      } catch (const std::invalid_argument& ex) {
        throw BadRequest("command", ex.what());
      }
      session->state = std::move(r.state);
      return {200, session_body(session->state, r.image)};
    }
    return error(404, "no route for " + method + " " + path);
  } catch (const BadRequest& ex) {
    return error(400, ex.what(), ex.field());
  } catch (const std::invalid_argument& ex) {
    return error(400, ex.what());
  } catch (const InvalidState& ex) {
    return error(400, ex.what());
  } catch (const std::exception& ex) {
    return error(500, ex.what());
  }
}

}  // namespace relate
