#include <algorithm>
#include <set>

#include "relate/data.hpp"
#include "relate/eval.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

TEST_CASE("frechet distance") {
  CHECK(frechet_self_distance(1) < 1e-6);
  CHECK(gaussian_frechet_error(20000, 2) < 0.05);

  const auto a = torch::randn({300, 5}, torch::kFloat64);
  const auto b = torch::randn({250, 5}, torch::kFloat64) * 1.5 + 0.3;
  const double ab = frechet_distance(a, b).distance;
  CHECK(ab > 0.0);
  CHECK(frechet_distance(b, a).distance == doctest::Approx(ab).epsilon(1e-9));
  // Row order is irrelevant.
  const auto perm = torch::randperm(300, torch::kLong);
  CHECK(frechet_distance(a.index_select(0, perm), b).distance == doctest::Approx(ab).epsilon(1e-9));

  SUBCASE("one-dimensional closed form") {
    const auto x = torch::tensor({-1.0, 0.0, 1.0}, torch::kFloat64).reshape({3, 1});
    const auto y = torch::tensor({1.0, 3.0, 5.0}, torch::kFloat64).reshape({3, 1});
    // means 0 and 3, variances 1 and 4: 9 + (1 - 2)^2
    CHECK(frechet_distance(x, y).distance == doctest::Approx(10.0).epsilon(1e-12));
  }
  SUBCASE("singular covariances are regularized and reported") {
    const auto flat = torch::zeros({10, 3}, torch::kFloat64);
    const auto r = frechet_distance(flat, flat);
    CHECK(r.regularized);
    CHECK(r.distance < 1e-9);
    CHECK(!frechet_distance(a, b).regularized);
  }
  CHECK_THROWS_AS(frechet_distance(torch::zeros({4, 2}), torch::zeros({4, 3})), std::invalid_argument);
  CHECK_THROWS_AS(frechet_distance(torch::zeros({1, 2}), torch::zeros({4, 2})), std::invalid_argument);
}

TEST_CASE("embedder") {
  const Embedder e({EmbedderKind::kFixedRandomConv, 5, 32});
  const auto x = torch::rand({4, 3, 32, 32}) * 2 - 1;
  const auto a = e.embed(x);
  CHECK(a.sizes() == torch::IntArrayRef({4, 32}));
  CHECK((a.scalar_type() == torch::kFloat64));
  CHECK(torch::equal(a, Embedder({EmbedderKind::kFixedRandomConv, 5, 32}).embed(x)));
  CHECK(!torch::equal(a, Embedder({EmbedderKind::kFixedRandomConv, 6, 32}).embed(x)));
  CHECK(torch::allclose(a.slice(0, 1, 2), e.embed(x.slice(0, 1, 2)), 1e-5, 1e-6));
  CHECK_THROWS_AS(Embedder({EmbedderKind::kTrainedProbe, 0, 32}), std::invalid_argument);
  CHECK_THROWS_AS(e.embed(torch::zeros({2, 1, 8, 8})), std::invalid_argument);
}

TEST_CASE("disentanglement probe") {
  auto cfg = tiny_config();
  cfg.image_side = 64;
  cfg.canvas_side = 16;
  cfg.window_side = 8;

  SUBCASE("a model that draws each object at its pose scores within a pixel") {
    CHECK(disc_oracle_median(3) <= 1.0);
  }
  SUBCASE("a model that ignores the pose is no better than chance") {
    const auto blind = disentanglement_score(pose_blind_model(cfg), 100, 3, 4);
    const auto null = disentanglement_null(cfg, static_cast<std::int64_t>(blind.distances.size()), 500, 5);
    CHECK(blind.distances.size() == 300);
    CHECK(blind.median > null.quantile05);
    CHECK(null.quantile05 < null.median);
    CHECK(blind.median == doctest::Approx(null.median).epsilon(0.25));
  }
  SUBCASE("a constant brightness shift moves nothing") {
    const auto oracle = disc_oracle_model(cfg);
    auto dimmed = oracle;
    dimmed.render = [base = oracle.render](const LatentScene& s, const std::vector<bool>& v) {
      return base(s, v) + 0.25f;
    };
    const auto a = disentanglement_score(oracle, 30, 3, 6);
    const auto b = disentanglement_score(dimmed, 30, 3, 6);
    CHECK(a.distances == b.distances);
  }
  CHECK_THROWS_AS(disentanglement_score(disc_oracle_model(cfg), 0, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(disentanglement_null(cfg, 0, 10, 1), std::invalid_argument);
}

TEST_CASE("metric reports carry their provenance") {
  const auto dir = relate::test::scratch_dir("eval");
  const auto cfg = tiny_config(Variant::kDynamic);
  const auto [train, test] = generate_dataset("balls_in_bowl", 3, 2, 6, 5, 16, dir);
  GeneratorModel model(cfg);
  randomize(*model, 7, 0.1);
  model->eval();

  EmbedderSpec spec{EmbedderKind::kFixedRandomConv, 9, 16};
  const auto fid = fid_proxy(model, test, 8, spec, 11);
  const auto j = fid.to_json();
  CHECK(j["metric"] == "fid_proxy");
  CHECK(j["n"] == 8);
  CHECK(j["seeds"]["sampling"] == 11);
  CHECK(j["seeds"]["embedder"] == 9);
  CHECK(j["embedder"]["seed"] == 9);
  CHECK(j["embedder"]["dim"] == 16);
  CHECK(j["regularization"]["epsilon"] == kFrechetEpsilon);
  CHECK(j["warnings"].size() == 1);
  CHECK(fid_proxy(model, test, 8, spec, 11).value == fid.value);

  const auto fvd = fvd_proxy(model, test, 6, 3, spec, 12);
  CHECK(fvd.metric == "fvd_proxy");
  CHECK(fvd.to_json()["details"]["clip_len"] == 3);
  CHECK(std::isfinite(fvd.value));
  CHECK_THROWS_AS(fvd_proxy(model, test, 6, 9, spec, 12), std::invalid_argument);

  const auto dis = disentanglement_report(model, 4, 2, 13).to_json();
  CHECK(dis["n"] == 8);
  CHECK(!dis.contains("embedder"));
  CHECK(dis["details"].contains("null_median_q05"));

  auto wrong = cfg;
  wrong.image_side = 32;
  GeneratorModel other(wrong);
  CHECK_THROWS_AS(fid_proxy(other, test, 8, spec, 1), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("time-shuffled baseline permutes frames within each clip") {
  const auto dir = relate::test::scratch_dir("shuffle");
  const auto m = gen_balls_in_bowl(8, 6, 12, 16, dir);
  const auto real = manifest_clips(m, 6, 10, 21);
  const auto shuffled = time_shuffle_baseline(m, 6, 10, 21);
  REQUIRE(shuffled.sizes() == real.sizes());
  std::set<std::vector<std::int64_t>> orders;
  for (std::int64_t c = 0; c < real.size(0); ++c) {
    std::vector<std::int64_t> order;
    for (std::int64_t t = 0; t < 10; ++t) {
      std::int64_t match = -1;
      for (std::int64_t u = 0; u < 10; ++u)
        if (std::find(order.begin(), order.end(), u) == order.end() && torch::equal(shuffled[c][t], real[c][u])) {
          match = u;
          break;
        }
      CHECK(match >= 0);
      order.push_back(match);
    }
    orders.insert(order);
  }
  CHECK(orders.size() > 1);
  CHECK(torch::equal(shuffled, time_shuffle_baseline(m, 6, 10, 21)));
  std::filesystem::remove_all(dir);
}
