#include <cmath>

#include "relate/adversary.hpp"
#include "relate/losses.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

TEST_CASE("discriminator outputs") {
  const auto cfg = tiny_config();
  Discriminator d(cfg);
  randomize(*d, 1, 0.3);
  d->eval();  // training-mode forwards advance the power iteration
  const auto x = torch::rand({3, 3, 16, 16}) * 2 - 1;
  const auto out = d->forward(x);
  CHECK(out.prob.sizes() == torch::IntArrayRef({3}));
  CHECK(out.prob.min().item<double>() > 0.0);
  CHECK(out.prob.max().item<double>() < 1.0);
  CHECK(out.pose.sizes() == torch::IntArrayRef({3, 2}));
  CHECK(out.pose.abs().max().item<double>() <= 1.0);
  CHECK(out.style_probs.size() == 4);
  CHECK(out.features.size() == 4);
  CHECK(torch::equal(discriminate(x, d), out.prob));
  CHECK(style_discriminate(x, d).size() == 4);
  CHECK(regress_position(x, d).sizes() == torch::IntArrayRef({3, 2}));
  CHECK_THROWS(d->forward(torch::zeros({1, 4, 16, 16})));
}

TEST_CASE("full-size backbone ends in 4 x 4 x 1024") {
  const auto cfg = preset("balls_in_bowl").model;
  Discriminator d(cfg);
  torch::NoGradGuard guard;
  const auto out = d->forward(torch::zeros({1, 3, 128, 128}));
  CHECK(out.features.back().sizes() == torch::IntArrayRef({1, 1024, 4, 4}));
  CHECK(out.features.back().flatten(1).size(1) == 16384);
}

TEST_CASE("dynamic models stack frames along channels") {
  auto cfg = tiny_config(Variant::kDynamic);
  cfg.clip_length = 10;
  Discriminator d(cfg);
  CHECK(cfg.discriminator_input_channels() == 30);
  torch::NoGradGuard guard;
  CHECK(d->forward(torch::zeros({2, 30, 16, 16})).prob.sizes() == torch::IntArrayRef({2}));
}

TEST_CASE("layer style statistics") {
  const auto [mu, var] = layer_style_stats(torch::tensor({1.0, 2.0, 3.0, 4.0}).reshape({1, 1, 2, 2}));
  CHECK(mu.item<double>() == doctest::Approx(2.5));
  CHECK(var.item<double>() == doctest::Approx(1.25));

  const auto [cmu, cvar] = layer_style_stats(torch::full({1, 2, 3, 3}, 0.7, torch::kFloat64));
  CHECK(max_abs(cmu - 0.7) < 1e-15);
  CHECK(max_abs(cvar) < 1e-15);

  const auto phi = torch::randn({2, 3, 4, 5}, torch::kFloat64);
  const auto [m, v] = layer_style_stats(phi);
  CHECK(m.sizes() == torch::IntArrayRef({2, 3}));
  double worst = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) s += phi[n][c][y][x].item<double>();
      const double mean = s / 20.0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) s2 += std::pow(phi[n][c][y][x].item<double>() - mean, 2);
      worst = std::max({worst, std::abs(m[n][c].item<double>() - mean), std::abs(v[n][c].item<double>() - s2 / 20.0)});
    }
  CHECK(worst < 1e-12);
}

TEST_CASE("zero-weight style heads output one half") {
  const auto cfg = tiny_config();
  Discriminator d(cfg);
  randomize(*d, 2, 0.3);
  {
    torch::NoGradGuard guard;
    for (auto& h : d->style_heads)
      for (auto& p : h->parameters()) p.zero_();
  }
  for (const auto& p : d->forward(torch::randn({2, 3, 16, 16})).style_probs)
    CHECK(max_abs(p - 0.5) == 0.0);
}

TEST_CASE("style statistics are taken before instance normalization") {
  const auto cfg = tiny_config();
  Discriminator d(cfg);
  randomize(*d, 3, 0.3);
  const auto out = d->forward(torch::randn({2, 3, 16, 16}));
  for (std::size_t l = 0; l < out.features.size(); ++l) {
    const auto [a, va] = layer_style_stats(out.features[l]);
    const auto [b, vb] = layer_style_stats(out.normalized[l]);
    CHECK(!torch::allclose(torch::cat({a, va}, 1), torch::cat({b, vb}, 1)));
  }
}

TEST_CASE("spectral normalization keeps the largest singular value near one") {
  SpectralWeight w(std::vector<std::int64_t>{16, 8, 3, 3});
  Rng rng(4);
  {
    torch::NoGradGuard guard;
    fill_normal(w->weight, rng, 0.5);
  }
  w->train();
  for (int i = 0; i < 30; ++i) w->forward();
  const auto normalized = w->forward().detach().reshape({16, -1});
  const double top = torch::linalg_svdvals(normalized)[0].item<double>();
  CHECK(top >= 0.95);
  CHECK(top <= 1.05);

  // Eval mode reuses u.
  w->eval();
  const auto u = w->spectral_u.clone();
  w->forward();
  CHECK(torch::equal(u, w->spectral_u));
}

TEST_CASE("both heads back-propagate into the shared backbone") {
  const auto cfg = tiny_config();
  Discriminator d(cfg);
  randomize(*d, 5, 0.3);
  d->eval();
  const auto x = torch::randn({2, 3, 16, 16});
  const auto backbone = d->convs.front()->weight->weight;
  for (int head = 0; head < 2; ++head) {
    const auto out = d->forward(x);
    const auto loss = head == 0 ? out.prob.sum() : out.pose.sum();
    const auto g = torch::autograd::grad({loss}, {backbone})[0];
    CHECK(g.abs().sum().item<double>() > 0.0);
  }
}

TEST_CASE("adversarial loss values") {
  const auto half = torch::full({4}, 0.5, torch::kFloat64);
  CHECK(loss_gan(half, half).discriminator.item<double>() == doctest::Approx(2 * std::log(2.0)));

  const auto real = torch::full({4}, 1 - 1e-7, torch::kFloat64);
  const auto fake = torch::full({4}, 1e-7, torch::kFloat64);
  const auto perfect = loss_gan(real, fake, GeneratorLoss::kNonSaturating);
  CHECK(perfect.discriminator.item<double>() < 1e-5);
  CHECK(perfect.generator.item<double>() > 10.0);
  CHECK(loss_gan(real, fake, GeneratorLoss::kSaturating).generator.item<double>() > -1e-5);

  // Exact 0 and 1 stay finite through the clamp.
  const auto hard = loss_gan(torch::ones({2}, torch::kFloat64), torch::zeros({2}, torch::kFloat64));
  CHECK(std::isfinite(hard.discriminator.item<double>()));

  const auto r = torch::rand({6}, torch::kFloat64) * 0.9 + 0.05;
  const auto f = torch::rand({6}, torch::kFloat64) * 0.9 + 0.05;
  double d_ref = 0.0, g_sat = 0.0, g_ns = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double ri = r[i].item<double>(), fi = f[i].item<double>();
    d_ref += -(std::log(ri) + std::log(1 - fi)) / 6.0;
    g_sat += std::log(1 - fi) / 6.0;
    g_ns += -std::log(fi) / 6.0;
  }
  CHECK(loss_gan(r, f).discriminator.item<double>() == doctest::Approx(d_ref).epsilon(1e-12));
  CHECK(loss_gan(r, f).generator.item<double>() == doctest::Approx(g_sat).epsilon(1e-12));
  CHECK(generator_gan_loss(f, GeneratorLoss::kNonSaturating).item<double>() == doctest::Approx(g_ns).epsilon(1e-12));
}

TEST_CASE("style loss is a sum of per-layer terms") {
  const auto half = torch::full({3}, 0.5, torch::kFloat64);
  const std::vector<torch::Tensor> halves(4, half);
  CHECK(loss_style(halves, halves).discriminator.item<double>() == doctest::Approx(8 * std::log(2.0)));

  std::vector<torch::Tensor> real, fake;
  for (int l = 0; l < 4; ++l) {
    real.push_back(torch::rand({3}, torch::kFloat64) * 0.9 + 0.05);
    fake.push_back(torch::rand({3}, torch::kFloat64) * 0.9 + 0.05);
  }
  double d = 0.0, g = 0.0;
  for (int l = 0; l < 4; ++l) {
    const auto one = loss_gan(real[static_cast<std::size_t>(l)], fake[static_cast<std::size_t>(l)]);
    d += one.discriminator.item<double>();
    g += one.generator.item<double>();
  }
  const auto total = loss_style(real, fake);
  CHECK(total.discriminator.item<double>() == doctest::Approx(d).epsilon(1e-12));
  CHECK(total.generator.item<double>() == doctest::Approx(g).epsilon(1e-12));
  CHECK(generator_style_loss(fake).item<double>() == doctest::Approx(g).epsilon(1e-12));
}

TEST_CASE("position loss") {
  const auto target = torch::tensor({{0.1, -0.2}, {0.5, 0.3}}, torch::kFloat64).set_requires_grad(true);
  CHECK(loss_position(target, target.detach().clone()).item<double>() == 0.0);

  const auto pred = torch::tensor({{0.0, 0.0}, {0.2, 0.7}}, torch::kFloat64).set_requires_grad(true);
  const double want = ((0.01 + 0.04) + (0.09 + 0.16)) / 2.0;
  const auto loss = loss_position(target, pred);
  CHECK(loss.item<double>() == doctest::Approx(want).epsilon(1e-12));

  const auto grads = torch::autograd::grad({loss}, {target, pred}, {}, false, false, true);
  CHECK((!grads[0].defined() || max_abs(grads[0]) < 1e-12));
  CHECK(max_abs(grads[1]) > 0.0);
}
