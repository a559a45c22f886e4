#include "relate/config.hpp"
#include "relate/errors.hpp"
#include "relate/latents.hpp"
#include "relate/rng.hpp"
#include "support.hpp"

using namespace relate;

namespace {

ModelConfig balls_cfg() {
  ModelConfig cfg;  // BallsInBowl row: N_b 3, N_f 1, K 2..2, range 0.8
  cfg.background_dim = 3;
  cfg.foreground_dim = 1;
  cfg.k_min = cfg.k_max = 2;
  cfg.pose_x = cfg.pose_y = {-0.8, 0.8};
  return cfg;
}

double variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("sample_scene draws the configured object count and code ranges") {
  Rng rng(1);
  const auto s = sample_scene(rng, balls_cfg());
  CHECK(s.K() == 2);
  REQUIRE(s.z0.size() == 3);
  for (double v : s.z0) CHECK((v >= -1.0 && v <= 1.0));
  for (const auto& o : s.objects) {
    REQUIRE(o.z.size() == 1);
    CHECK((o.z[0] >= -1.0 && o.z[0] <= 1.0));
    CHECK(!o.theta.has_value());
    CHECK(std::abs(o.theta_hat.x) <= 0.8);
    CHECK(std::abs(o.theta_hat.y) <= 0.8);
  }
  CHECK(!s.corrected());
  CHECK_THROWS_AS(s.poses(), InvalidState);
}

TEST_CASE("sampling is a pure function of seed and config") {
  Rng a(42), b(42), c(43);
  const auto sa = sample_scene(a, balls_cfg());
  CHECK(sa == sample_scene(b, balls_cfg()));
  CHECK(!(sa == sample_scene(c, balls_cfg())));
}

TEST_CASE("K = 0 or negative is rejected") {
  Rng rng(0);
  CHECK_THROWS_AS(sample_scene(rng, balls_cfg(), 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_scene(rng, balls_cfg(), -3), std::invalid_argument);
}

TEST_CASE("any K from 1 to 10 is accepted, with or without a range") {
  auto cfg = balls_cfg();
  Rng rng(5);
  for (int K = 1; K <= 10; ++K) CHECK(sample_scene(rng, cfg, K).K() == K);
  cfg.k_min = 1;
  cfg.k_max = 10;
  std::vector<int> seen(11, 0);
  for (int i = 0; i < 2000; ++i) ++seen[static_cast<std::size_t>(sample_scene(rng, cfg).K())];
  for (int K = 1; K <= 10; ++K) CHECK(seen[static_cast<std::size_t>(K)] > 100);
  CHECK(seen[0] == 0);
}

TEST_CASE("raw poses are uniform over the pose range") {
  auto cfg = balls_cfg();
  cfg.pose_x = cfg.pose_y = {-0.6, 0.6};
  Rng rng(7);
  std::vector<double> xs, ys;
  for (int i = 0; i < 5000; ++i)
    for (const auto& o : sample_scene(rng, cfg).objects) {
      xs.push_back(o.theta_hat.x);
      ys.push_back(o.theta_hat.y);
    }
  REQUIRE(xs.size() == 10000);
  for (const auto* v : {&xs, &ys}) {
    double mean = 0.0;
    for (double x : *v) mean += x;
    mean /= 10000.0;
    CHECK(std::abs(mean) < 0.02);
    CHECK(*std::min_element(v->begin(), v->end()) >= -0.6);
    CHECK(*std::max_element(v->begin(), v->end()) <= 0.6);
    CHECK(variance(*v) == doctest::Approx(1.2 * 1.2 / 12.0).epsilon(0.05));
  }
}

TEST_CASE("asymmetric per-axis ranges are honored") {
  auto cfg = balls_cfg();
  cfg.pose_x = {-0.6, 0.6};
  cfg.pose_y = {0.0, 0.6};
  Rng rng(8);
  for (int i = 0; i < 500; ++i)
    for (const auto& o : sample_scene(rng, cfg).objects) {
      CHECK(o.theta_hat.y >= 0.0);
      CHECK(o.theta_hat.y <= 0.6);
    }
}

TEST_CASE("evaluation backgrounds") {
  const auto cfg = balls_cfg();
  Rng rng(3);
  std::vector<std::vector<double>> comps(3);
  for (int i = 0; i < 10000; ++i) {
    const auto z0 = sample_background_eval(rng, cfg, 0.5);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(z0[c]) <= 0.5);
      comps[c].push_back(z0[c]);
    }
  }
  for (const auto& c : comps) CHECK(variance(c) == doctest::Approx(1.0 / 12.0).epsilon(0.05));

  CHECK_THROWS_AS(sample_background_eval(rng, cfg, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_background_eval(rng, cfg, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(sample_background_eval(rng, cfg, -0.1), std::invalid_argument);

  // Half range 1 is the training distribution: same stream, same values.
  Rng a(9), b(9);
  std::vector<double> ref;
  for (int i = 0; i < 3; ++i) ref.push_back(b.uniform(-1.0, 1.0));
  CHECK(sample_background_eval(a, cfg, 1.0) == ref);
}

TEST_CASE("pose and pixel frames") {
  const auto [cx, cy] = pose_to_pixel({0.0, 0.0}, 64);
  CHECK(cx == doctest::Approx(32.0));
  CHECK(cy == doctest::Approx(32.0));
  const auto [lx, ty] = pose_to_pixel({1.0, 1.0}, 64);
  CHECK(lx == doctest::Approx(0.0));
  CHECK(ty == doctest::Approx(0.0));
  const auto [rx, by] = pose_to_pixel({-1.0, -1.0}, 64);
  CHECK(rx == doctest::Approx(64.0));
  CHECK(by == doctest::Approx(64.0));
  const Pose p{0.3, -0.45};
  const auto [px, py] = pose_to_pixel(p, 32);
  const auto back = pixel_to_pose(px, py, 32);
  CHECK(back.x == doctest::Approx(p.x));
  CHECK(back.y == doctest::Approx(p.y));
}

TEST_CASE("to_batch pads to the largest K and masks the padding") {
  const auto cfg = balls_cfg();
  Rng rng(4);
  const auto a = sample_scene(rng, cfg, 1);
  const auto b = sample_scene(rng, cfg, 3);
  const auto batch = to_batch({a, b}, cfg.foreground_dim);
  CHECK(batch.batch() == 2);
  CHECK(batch.slots() == 3);
  CHECK(torch::equal(batch.mask, torch::tensor({{1.f, 0.f, 0.f}, {1.f, 1.f, 1.f}})));
  CHECK(batch.z0.sizes() == torch::IntArrayRef({2, 3}));
  CHECK(batch.theta_hat.sizes() == torch::IntArrayRef({2, 3, 2}));
  CHECK(batch.theta_hat[1][2][0].item<double>() == doctest::Approx(b.objects[2].theta_hat.x).epsilon(1e-6));
  CHECK_THROWS_AS(to_batch({a}, 5), InvalidState);
}

TEST_CASE("rng streams and serialization") {
  Rng a(11);
  for (int i = 0; i < 5; ++i) a.normal();  // leaves a cached Box-Muller spare
  auto b = Rng::deserialize(a.serialize());
  CHECK(a == b);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  CHECK(Rng::for_stream(1, 0).next_u64() != Rng::for_stream(1, 1).next_u64());
  CHECK(Rng::for_stream(1, 5).next_u64() == Rng::for_stream(1, 5).next_u64());
  Rng c(2);
  for (int i = 0; i < 1000; ++i) {
    const int v = c.uniform_int(-2, 3);
    CHECK((v >= -2 && v <= 3));
  }
}

TEST_CASE("config validation and text round trip") {
  auto cfg = balls_cfg();
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.window_side = bad.canvas_side;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.k_min = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.k_min = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.pose_x = {-1.2, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.channels = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  for (const auto& name : preset_names()) {
    const auto p = preset(name);
    CHECK_NOTHROW(p.model.validate());
    const auto kv = parse_key_values(to_config_text(p.model, p.train));
    CHECK(model_config_from(kv) == p.model);
    CHECK(train_config_from(kv) == p.train);
  }
  CHECK_THROWS(model_config_from(parse_key_values("model.nonsense = 3\n")));
  CHECK_THROWS(preset("no_such_preset"));
}

TEST_CASE("scale presets") {
  const auto full = preset("balls_in_bowl").model;
  CHECK(full.image_side == 128);
  CHECK(desk_scale(full).image_side == 64);
  const auto toy = toy_scale(full);
  CHECK(toy.image_side == 32);
  CHECK_NOTHROW(toy.validate());
  CHECK_NOTHROW(desk_scale(full).validate());
  const auto dyn = dynamic_variant(preset("balls_in_bowl"), 10);
  CHECK(dyn.model.variant == Variant::kDynamic);
  CHECK(dyn.model.discriminator_input_channels() == 30);
}
