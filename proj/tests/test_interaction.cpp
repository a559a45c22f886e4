#include "relate/errors.hpp"
#include "relate/interaction.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

namespace {

/// Last layer of `mlp` reduced to a constant pre-activation `bias`.
void force_output(const Mlp& mlp, std::vector<double> bias) {
  torch::NoGradGuard guard;
  auto& last = mlp->layers.back();
  last->weight.zero_();
  last->bias.copy_(torch::tensor(bias, torch::kFloat64).to(last->bias.scalar_type()));
}

void zero_all(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& p : m.parameters()) p.zero_();
}

}  // namespace

TEST_CASE("static correction is permutation equivariant") {
  for (int K : {1, 2, 3, 5, 8}) {
    CAPTURE(K);
    CHECK(correction_equivariance(K, 100 + static_cast<std::uint64_t>(K)) < 1e-6);
  }
}

TEST_CASE("one dynamics step is permutation equivariant") {
  for (int K : {1, 2, 3, 5, 8}) {
    CAPTURE(K);
    CHECK(dynamics_equivariance(K, 200 + static_cast<std::uint64_t>(K)) < 1e-6);
  }
}

TEST_CASE("static correction equals the brute-force pairwise sum") {
  for (int K : {1, 2, 3, 6}) {
    CAPTURE(K);
    CHECK(correction_oracle_error(K, 300 + static_cast<std::uint64_t>(K)) < 1e-6);
  }
}

TEST_CASE("single object: the interaction embedding is the empty sum") {
  CHECK(single_object_embedding(4) == 0.0);
}

TEST_CASE("correction modes") {
  auto cfg = tiny_config();
  Rng rng(1);
  const auto scene = random_scene(rng, cfg, 3);
  std::vector<Pose> raw;
  for (const auto& o : scene.objects) raw.push_back(o.theta_hat);

  SUBCASE("zero weights leave raw poses untouched") {
    PoseCorrector net(cfg);
    zero_all(*net);
    CHECK(correct_poses(scene, net) == raw);
  }
  SUBCASE("identity mode skips the network") {
    cfg.correction = CorrectionMode::kIdentity;
    PoseCorrector net(cfg);
    randomize(*net, 2, 0.5);
    CHECK(correct_poses(scene, net) == raw);
  }
  SUBCASE("absolute mode drops the skip connection") {
    cfg.correction = CorrectionMode::kAbsolute;
    PoseCorrector net(cfg);
    randomize(*net, 2, 0.5);
    force_output(net->effect, {std::atanh(0.25), std::atanh(-0.5)});
    for (const auto& p : correct_poses(scene, net)) {
      CHECK(p.x == doctest::Approx(0.25).epsilon(1e-6));
      CHECK(p.y == doctest::Approx(-0.5).epsilon(1e-6));
    }
  }
}

TEST_CASE("code widths that disagree with the weights are an invalid state") {
  const auto cfg = tiny_config();
  PoseCorrector net(cfg);
  Rng rng(3);
  auto scene = random_scene(rng, cfg, 2);
  scene.z0.push_back(0.0);
  CHECK_THROWS_AS(correct_poses(scene, net), InvalidState);
}

TEST_CASE("ordered chain") {
  const auto cfg = tiny_config(Variant::kOrdered);
  SUBCASE("matches the brute-force chain") {
    for (int K : {1, 2, 5}) {
      CAPTURE(K);
      CHECK(ordered_oracle_error(K, 400 + static_cast<std::uint64_t>(K)) < 1e-6);
    }
  }
  SUBCASE("K = 1 applies only f0") {
    OrderedCorrector net(cfg);
    randomize(*net, 5, 0.3);
    force_output(net->next, {3.0, 0.7});  // would move anything it touched
    zero_all(*net->first);
    Rng rng(6);
    const auto scene = random_scene(rng, cfg, 1);
    const auto poses = correct_poses_ordered(scene, net);
    REQUIRE(poses.size() == 1);
    CHECK(poses[0] == scene.objects[0].theta_hat);
  }
  SUBCASE("constant f1 increment builds a vertical stack") {
    OrderedCorrector net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 7, 0.3);
    const double delta = -0.2;
    force_output(net->next, {-80.0, std::atanh(delta)});  // sigmoid(-80) is ~1e-35
    Rng rng(8);
    const auto scene = random_scene(rng, cfg, 5);
    const auto poses = correct_poses_ordered(scene, net);
    REQUIRE(poses.size() == 5);
    for (int k = 1; k < 5; ++k) {
      CHECK(std::abs(poses[static_cast<std::size_t>(k)].x - poses[0].x) < 1e-12);
      CHECK(poses[static_cast<std::size_t>(k)].y == doctest::Approx(poses[0].y + k * delta).epsilon(1e-12));
    }
  }
  SUBCASE("K = 0 is rejected") {
    OrderedCorrector net(cfg);
    CHECK_THROWS_AS(correct_poses_ordered(LatentScene{{0.0, 0.0, 0.0}, {}}, net), std::invalid_argument);
  }
  SUBCASE("the next link continues the chain") {
    OrderedCorrector net(cfg);
    randomize(*net, 9, 0.3);
    Rng rng(10);
    auto scene = random_scene(rng, cfg, 4);
    const auto full = correct_poses_ordered(scene, net);
    scene.objects.pop_back();
    const auto three = correct_poses_ordered(scene, net);
    for (std::size_t k = 0; k < 3; ++k) scene.objects[k].theta = three[k];
    const auto p = chain_next_pose(scene, net);
    CHECK(p.x == doctest::Approx(full[3].x).epsilon(1e-6));
    CHECK(p.y == doctest::Approx(full[3].y).epsilon(1e-6));
  }
}

TEST_CASE("velocity initialisation") {
  const auto cfg = tiny_config(Variant::kDynamic);
  Rng rng(11);
  auto scene = random_scene(rng, cfg, 3);
  for (auto& o : scene.objects) o.theta = o.theta_hat;

  SUBCASE("zero weights give zero velocities") {
    Dynamics net(cfg);
    zero_all(*net);
    for (const auto& t : init_velocities(scene, net))
      for (const auto& v : t.velocities) CHECK(v == Pose{});
  }
  SUBCASE("identical objects get identical tracks") {
    Dynamics net(cfg);
    randomize(*net, 12, 0.3);
    scene.objects[2] = scene.objects[0];
    const auto tracks = init_velocities(scene, net);
    CHECK(tracks[0] == tracks[2]);
  }
  SUBCASE("e_v and the first update match hand-rolled forward passes") {
    for (int K : {1, 2, 4}) CHECK(dynamics_oracle_error(K, 500 + static_cast<std::uint64_t>(K)) < 1e-6);
  }
}

TEST_CASE("dynamics rollout") {
  const auto cfg = tiny_config(Variant::kDynamic);
  Rng rng(13);
  auto scene = random_scene(rng, cfg, 2);
  for (auto& o : scene.objects) o.theta = o.theta_hat;

  SUBCASE("constant velocity integrates exactly") {
    Dynamics net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 14, 0.3);
    const Pose v{0.03, -0.015};
    force_output(net->effect, {std::atanh(v.x), std::atanh(v.y)});
    const int T = 12;
    const auto frames = rollout(scene, net, T + 1);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto start = scene.objects[k].theta_hat;
      CHECK(frames[T][k].x == doctest::Approx(start.x + T * v.x).epsilon(1e-12));
      CHECK(frames[T][k].y == doctest::Approx(start.y + T * v.y).epsilon(1e-12));
    }
  }
  SUBCASE("five steps match a step-by-step oracle over all pairs") {
    Dynamics net(cfg);
    net->to(torch::kFloat64);
    randomize(*net, 15, 0.3);
    const auto frames = rollout(scene, net, 6);
    DynamicsState ref{scene.poses(), init_velocity_reference(scene, scene.poses(), net)};
    for (int t = 1; t <= 5; ++t) {
      ref = dynamics_step_reference(ref.poses, ref.tracks, scene, net);
      CHECK(max_deviation(frames[static_cast<std::size_t>(t)], ref.poses) < 1e-9);
    }
  }
  SUBCASE("a lone object ignores the pair network") {
    Dynamics net(cfg);
    randomize(*net, 16, 0.3);
    scene.objects.resize(1);
    const auto a = rollout(scene, net, 5);
    {
      torch::NoGradGuard guard;
      for (auto& p : net->pair->parameters()) p.mul_(7.0);
    }
    CHECK(rollout(scene, net, 5) == a);
  }
  SUBCASE("telescoping identity over 30 frames") { CHECK(telescoping_error(30, 17) < 1e-5); }
  SUBCASE("T = 1 is just the initial poses; T = 0 is rejected") {
    Dynamics net(cfg);
    const auto frames = rollout(scene, net, 1);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0] == scene.poses());
    CHECK_THROWS_AS(rollout(scene, net, 0), std::invalid_argument);
  }
  SUBCASE("more objects than the training range") {
    Dynamics net(cfg);
    randomize(*net, 18, 0.1);
    Rng r(19);
    auto big = random_scene(r, cfg, 10);
    for (auto& o : big.objects) o.theta = o.theta_hat;
    const auto frames = rollout(big, net, 30);
    CHECK(frames.size() == 30);
    for (const auto& f : frames) CHECK(f.size() == 10);
  }
  SUBCASE("missing tracks are an invalid state") {
    Dynamics net(cfg);
    CHECK_THROWS_AS(step_dynamics(scene.poses(), {}, scene, net), InvalidState);
  }
}

TEST_CASE("window scale") {
  auto cfg = tiny_config();
  cfg.scale_enabled = true;
  ScaleNet net(cfg);
  Rng rng(20);
  auto scene = random_scene(rng, cfg, 3);
  for (auto& o : scene.objects) o.theta = o.theta_hat;

  zero_all(*net);
  for (double s : predict_scales(scene, net)) CHECK(s == static_cast<double>(cfg.window_side));
  force_output(net->net, {std::atanh(-0.5)});
  for (double s : predict_scales(scene, net)) CHECK(s == doctest::Approx(cfg.window_side / 2.0).epsilon(1e-6));

  const auto sides = scaled_window_sides(torch::tensor({-0.9, 0.999, 0.0}, torch::kFloat64), 6.0, 8.0);
  CHECK(sides[0].item<double>() == 1.0);
  CHECK(sides[1].item<double>() == 8.0);
  CHECK(sides[2].item<double>() == 6.0);

  CHECK(preset("clevr3_scale").model.window_side == 6);
  CHECK(preset("clevr5_scale").model.window_side == 4);
}
