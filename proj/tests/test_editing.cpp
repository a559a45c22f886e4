#include "relate/editing.hpp"
#include "relate/errors.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

namespace {

GeneratorModel tiny_model(Variant v = Variant::kGeneral, std::uint64_t seed = 1) {
  GeneratorModel m(tiny_config(v));
  randomize(*m, seed, 0.2);
  m->eval();
  return m;
}

EditCommand command(EditKind kind, int k = 0) {
  EditCommand c;
  c.kind = kind;
  c.k = k;
  return c;
}

}  // namespace

TEST_CASE("moving an object and moving it back restores the image exactly") {
  const auto model = tiny_model();
  const auto s = new_edit_state(model, 3, 3);
  const auto before = render_edit_state(model, s);
  auto move = command(EditKind::kSetPose, 1);
  move.theta = {0.4, -0.3};
  const auto moved = edit_scene(model, s, move);
  CHECK(*moved.state.scene.objects[1].theta == Pose{0.4, -0.3});
  CHECK(!torch::equal(moved.image, before));
  // Other objects keep their corrected poses: set_pose bypasses the correction.
  CHECK((moved.state.scene.objects[0].theta == s.scene.objects[0].theta));
  CHECK((moved.state.scene.objects[2].theta == s.scene.objects[2].theta));

  move.theta = *s.scene.objects[1].theta;
  const auto back = edit_scene(model, moved.state, move);
  CHECK(torch::equal(back.image, before));
  CHECK((back.state == s));
}

TEST_CASE("removing every object leaves the background render") {
  const auto model = tiny_model();
  auto s = new_edit_state(model, 4, 3);
  auto hidden = s;
  hidden.visible.assign(3, false);
  const auto background = render_edit_state(model, hidden);
  for (int i = 0; i < 3; ++i) s = edit_scene(model, s, command(EditKind::kRemoveObject, 0)).state;
  CHECK(s.K() == 0);
  CHECK(torch::equal(render_edit_state(model, s), background));
}

TEST_CASE("objects can be added past the training maximum") {
  for (auto v : {Variant::kGeneral, Variant::kOrdered}) {
    const auto model = tiny_model(v, 2);
    auto s = new_edit_state(model, 5, 2);
    const auto first = s.scene.objects;
    while (s.K() < 7) {
      const auto r = edit_scene(model, s, command(EditKind::kAddObject));
      CHECK(r.image.sizes() == torch::IntArrayRef({3, 16, 16}));
      CHECK(r.image.abs().max().item<double>() <= 1.0);
      s = r.state;
    }
    CHECK(s.K() == 7);
    CHECK(s.visible.size() == 7);
    CHECK(s.scale_overrides.size() == 7);
    CHECK((s.scene.objects[0] == first[0]));
    CHECK((s.scene.objects[1] == first[1]));
    CHECK(s.scene.corrected());
  }
}

TEST_CASE("appearance, background, visibility and scale edits") {
  const auto model = tiny_model();
  const auto s = new_edit_state(model, 6, 2);

  auto app = command(EditKind::kSetAppearance, 0);
  app.code = std::vector<double>(static_cast<std::size_t>(model->config.foreground_dim), 0.25);
  CHECK(edit_scene(model, s, app).state.scene.objects[0].z == app.code);
  app.code.pop_back();
  CHECK_THROWS_AS(edit_scene(model, s, app), std::invalid_argument);

  const auto resampled = edit_scene(model, s, command(EditKind::kResampleAppearance, 1)).state;
  CHECK(resampled.scene.objects[1].z != s.scene.objects[1].z);
  CHECK((resampled.scene.objects[1].theta == s.scene.objects[1].theta));
  CHECK((edit_scene(model, s, command(EditKind::kResampleAppearance, 1)).state == resampled));

  CHECK(edit_scene(model, s, command(EditKind::kSetBackground)).state.scene.z0 != s.scene.z0);

  const auto toggled = edit_scene(model, s, command(EditKind::kToggleVisible, 1));
  CHECK(!toggled.state.visible[1]);
  CHECK(torch::equal(edit_scene(model, toggled.state, command(EditKind::kToggleVisible, 1)).image,
                     render_edit_state(model, s)));

  auto scale = command(EditKind::kSetScale, 0);
  scale.window = 2.0;
  const auto small = edit_scene(model, s, scale).state;
  CHECK(effective_window_sides(model, small) == std::vector<double>{2.0, 4.0});
  scale.window = std::nullopt;
  CHECK(effective_window_sides(model, edit_scene(model, small, scale).state).empty());
  scale.window = 100.0;
  CHECK_THROWS_AS(edit_scene(model, s, scale), std::invalid_argument);
}

TEST_CASE("bad indices are rejected") {
  const auto model = tiny_model();
  const auto s = new_edit_state(model, 7, 2);
  for (auto kind : {EditKind::kSetPose, EditKind::kRemoveObject, EditKind::kToggleVisible,
                    EditKind::kResampleAppearance, EditKind::kSetScale}) {
    CAPTURE(to_string(kind));
    CHECK_THROWS_AS(edit_scene(model, s, command(kind, 2)), std::invalid_argument);
    CHECK_THROWS_AS(edit_scene(model, s, command(kind, -1)), std::invalid_argument);
  }
  auto broken = s;
  broken.visible.pop_back();
  CHECK_THROWS_AS(render_edit_state(model, broken), InvalidState);
}

TEST_CASE("edit states and commands round-trip through JSON") {
  const auto model = tiny_model();
  auto s = new_edit_state(model, 8, 3, "abc");
  s.visible[1] = false;
  s.scale_overrides[2] = 3.5;
  s.with_background = false;
  const auto j = to_json(s);
  CHECK((edit_state_from_json(nlohmann::json::parse(j.dump()), model->config) == s));

  for (int kind = 0; kind <= static_cast<int>(EditKind::kSetScale); ++kind) {
    EditCommand c;
    c.kind = static_cast<EditKind>(kind);
    c.k = 1;
    c.theta = {0.125, -0.5};
    c.code = {0.5, -0.25};
    c.window = 2.5;
    const auto back = command_from_json(to_json(c));
    CHECK((back.kind == c.kind));
    CHECK(to_string(back.kind) == to_json(c)["op"]);
  }

  SUBCASE("malformed input names the field") {
    auto bad = j;
    bad["scene"]["z0"] = {1.0};
    try {
      edit_state_from_json(bad, model->config);
      FAIL("expected BadRequest");
    } catch (const BadRequest& e) {
      CHECK(e.field() == "scene.z0");
    }
    bad = j;
    bad["visible"] = {true};
    CHECK_THROWS_AS(edit_state_from_json(bad, model->config), BadRequest);
    CHECK_THROWS_AS(command_from_json({{"op", "explode"}}), BadRequest);
    CHECK_THROWS_AS(pose_from_json({1.0}, "theta"), BadRequest);
  }
}

TEST_CASE("sampling is a pure function of the seed") {
  const auto model = tiny_model();
  const auto a = sample_edit_states(model, 4, std::nullopt, 9);
  const auto b = sample_edit_states(model, 4, std::nullopt, 9);
  CHECK((a == b));
  CHECK((a[0] != a[1]));
  for (const auto& s : sample_edit_states(model, 6, 2, 10)) CHECK(s.K() == 2);
}
