#include "relate/config.hpp"
#include "relate/model.hpp"
#include "relate/renderer.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

namespace {

ModelConfig sparse_config() {
  auto cfg = tiny_config();
  cfg.canvas_side = 16;
  cfg.window_side = 4;
  cfg.image_side = 32;
  return cfg;
}

}  // namespace

TEST_CASE("a decoded foreground canvas is zero outside its window") {
  const auto [stray, zeros] = window_sparsity(sparse_config(), 1);
  CHECK(stray == 0);
  CHECK(zeros == 240);  // 256 sites, 16 inside the window
}

TEST_CASE("translation") {
  SUBCASE("integer cell shifts move values exactly") { CHECK(integer_shift_error(2) == 0.0); }
  SUBCASE("fractional shifts match bilinear interpolation") { CHECK(fractional_shift_error(3) < 1e-6); }
  SUBCASE("pose zero is the identity, bit for bit") {
    Rng rng(4);
    auto c = torch::randn({2, 3, 8, 8});
    CHECK(torch::equal(translate_canvases(c, torch::zeros({2, 2})), c));
  }
  SUBCASE("content moves against the pose") {
    auto c = torch::zeros({1, 1, 8, 8});
    c.index_put_({0, 0, 3, 5}, 1.0);
    const auto out = translate_canvases(c, torch::tensor({{0.5f, -0.25f}}));  // +2 cells in x, -1 in y
    CHECK(out[0][0][4][3].item<float>() == 1.0f);
    CHECK(out.sum().item<float>() == 1.0f);
  }
  SUBCASE("malformed inputs") {
    CHECK_THROWS_AS(translate_canvases(torch::zeros({1, 8, 8}), torch::zeros({1, 2})), std::invalid_argument);
    CHECK_THROWS_AS(translate_canvases(torch::zeros({1, 1, 8, 8}), torch::full({1, 2}, NAN)), std::invalid_argument);
  }
}

TEST_CASE("pooling") {
  SUBCASE("permutation invariance is exact") {
    CHECK(pooling_permutation_exact(Pooling::kMax, 5));
    CHECK(pooling_permutation_exact(Pooling::kSum, 6));
  }
  SUBCASE("compose equals an explicit elementwise loop") {
    const auto a = torch::randn({2, 4, 4}, torch::kFloat64);
    const auto b = torch::randn({2, 4, 4}, torch::kFloat64);
    const auto c = torch::randn({2, 4, 4}, torch::kFloat64);
    const std::vector<FeatureCanvas> cs{{a}, {b}, {c}};
    const auto mx = compose(cs, Pooling::kMax).grid;
    const auto sm = compose(cs, Pooling::kSum).grid;
    double worst_max = 0.0, worst_sum = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          const double va = a[i][y][x].item<double>(), vb = b[i][y][x].item<double>(), vc = c[i][y][x].item<double>();
          worst_max = std::max(worst_max, std::abs(mx[i][y][x].item<double>() - std::max({va, vb, vc})));
          worst_sum = std::max(worst_sum, std::abs(sm[i][y][x].item<double>() - (va + vb + vc)));
        }
    CHECK(worst_max == 0.0);
    CHECK(worst_sum < 1e-12);
    CHECK(torch::equal(compose({{c}, {a}, {b}}, Pooling::kMax).grid, mx));
  }
  SUBCASE("masked entries are ignored; nothing live gives zero") {
    auto canvases = torch::full({1, 2, 1, 2, 2}, -3.0);
    canvases.index_put_({0, 1}, 5.0);
    const auto one_live = pool_canvases(canvases, torch::tensor({{1.0, 0.0}}, torch::kFloat64), Pooling::kMax);
    CHECK(torch::all(one_live == -3.0).item<bool>());
    const auto none = pool_canvases(canvases, torch::zeros({1, 2}, torch::kFloat64), Pooling::kMax);
    CHECK(torch::all(none == 0.0).item<bool>());
    const auto sum = pool_canvases(canvases, torch::tensor({{0.0, 1.0}}, torch::kFloat64), Pooling::kSum);
    CHECK(torch::all(sum == 5.0).item<bool>());
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(compose({{torch::zeros({2, 4, 4})}, {torch::zeros({2, 5, 5})}}, Pooling::kMax),
                    std::invalid_argument);
    CHECK_THROWS_AS(compose({}, Pooling::kMax), std::invalid_argument);
  }
}

TEST_CASE("window scale of one reproduces the unscaled path bit for bit") { CHECK(unit_scale_identical(7)); }

TEST_CASE("resized windows stay inside their side") {
  auto w = torch::ones({1, 2, 4, 4});
  const auto placed = place_windows(w, 16, torch::tensor({6.0f}));
  const auto live = (placed[0][0] != 0).sum().item<std::int64_t>();
  CHECK(live == 36);
  CHECK_THROWS_AS(place_windows(w, 16, torch::tensor({0.5f})), std::invalid_argument);
  CHECK_THROWS_AS(place_windows(w, 16, torch::tensor({17.0f})), std::invalid_argument);
}

TEST_CASE("instance normalization") {
  const auto x = torch::randn({2, 3, 5, 5}, torch::kFloat64) * 4 + 1;
  const auto y = instance_normalize(x);
  CHECK(max_abs(y.mean({2, 3})) < 1e-12);
  CHECK(max_abs(y.var({2, 3}, false) - 1.0) < 1e-5);
}

TEST_CASE("rendered images") {
  SUBCASE("tiny model: range and shape") {
    const auto cfg = tiny_config();
    GeneratorModel g(cfg);
    randomize(*g, 8, 0.5);
    Rng rng(9);
    const auto scene = corrected(random_scene(rng, cfg, 3), g);
    const auto img = render_latent_scene(g, scene);
    CHECK(img.sizes() == torch::IntArrayRef({3, 16, 16}));
    CHECK(img.min().item<double>() >= -1.0);
    CHECK(img.max().item<double>() <= 1.0);

    RenderOptions only;
    only.only_object = 3;
    CHECK_THROWS_AS(render_scene(scene, g->renderer, only), std::invalid_argument);
    only.only_object = -1;
    CHECK_THROWS_AS(render_scene(scene, g->renderer, only), std::invalid_argument);
    RenderOptions wrong;
    wrong.visible = {true};
    CHECK_THROWS_AS(render_scene(scene, g->renderer, wrong), std::invalid_argument);
  }
  SUBCASE("full and desk scale output sides") {
    const auto full = preset("balls_in_bowl").model;
    for (const auto& [cfg, side] : {std::pair{full, 128}, std::pair{desk_scale(full), 64}}) {
      Renderer r(cfg);
      Rng rng(10);
      auto scene = sample_scene(rng, cfg);
      for (auto& o : scene.objects) o.theta = o.theta_hat;
      const auto img = render_scene(scene, r);
      CHECK(img.sizes() == torch::IntArrayRef({3, side, side}));
      CHECK(img.abs().max().item<double>() <= 1.0);
    }
  }
  SUBCASE("background only when every object is hidden") {
    const auto cfg = tiny_config();
    Renderer r(cfg);
    randomize(*r, 11, 0.5);
    Rng rng(12);
    auto scene = random_scene(rng, cfg, 2);
    for (auto& o : scene.objects) o.theta = o.theta_hat;
    RenderOptions hidden;
    hidden.visible = {false, false};
    const auto bg = render(decode_background(scene.z0, r), r);
    CHECK(torch::equal(render_scene(scene, r, hidden), bg));
  }
}
