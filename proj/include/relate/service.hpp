#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "relate/editing.hpp"
#include "relate/model.hpp"

namespace relate {

/// Base64 of the PNG encoding of a [3, S, S] image in [-1, 1].
std::string image_payload(const torch::Tensor& chw);
std::string base64_encode(std::string_view bytes);
/// Throws std::invalid_argument on malformed input.
std::string base64_decode(std::string_view text);

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Inference and editing over one generator snapshot that is never written
/// to. Routes (JSON bodies, images as base64 PNG strings):
///
///   GET    /health
///   POST   /sample              {"n", "k"?, "seed"}            -> {"samples": [{"state", "image"}]}
///   POST   /components          {"state"} | {"scene"}          -> {"background", "objects": [..], "composite"}
///   POST   /rollout             {"state"} | {"scene"}, "frames" -> {"frames": [..], "poses": [[[x, y]]], "pixels": [[[px, py]]]}
///   POST   /sessions            {"seed", "k"?} | {"state"}     -> {"session", "state", "image"}
///   GET    /sessions/<id>                                      -> {"session", "state", "image"}
///   POST   /sessions/<id>/edit  {"command"}                    -> {"session", "state", "image"}
///   DELETE /sessions/<id>                                      -> {"deleted"}
///
/// Errors carry {"error", "field"?}: 400 for malformed bodies or bad
/// indices, 404 for unknown routes or sessions, 409 when the model cannot do
/// what was asked (a rollout on a static model).
class StudioService {
 public:
  explicit StudioService(GeneratorModel model);
  ~StudioService();
  StudioService(const StudioService&) = delete;
  StudioService& operator=(const StudioService&) = delete;

  /// Dispatches one request without any network involved.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// Starts listening in a background thread; returns the bound port
  /// (an ephemeral one when `port` is 0).
  int start(const std::string& host, int port);
  /// Blocks serving requests until stop() is called from another thread.
  void listen(const std::string& host, int port);
  void stop();

  const GeneratorModel& model() const { return model_; }

 private:
  struct State;
  GeneratorModel model_;
  std::unique_ptr<State> state_;
};

}  // namespace relate
