#include <fstream>

#include "relate/errors.hpp"
#include "relate/trainer.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

namespace {

TrainConfig small_train(std::uint64_t seed = 0) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.adam_beta1 = 0.5;
  t.batch_size = 4;
  t.seed = seed;
  return t;
}

torch::Tensor real_images(const ModelConfig& cfg, std::int64_t n = 4) {
  return torch::rand({n, cfg.discriminator_input_channels(), cfg.image_side, cfg.image_side}) * 2 - 1;
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("one step is one discriminator update and M generator updates") {
  auto t = small_train();
  t.generator_steps = 2;
  auto s = make_state(tiny_config(), t);
  const auto g0 = snapshot(*s.generator);
  const auto d0 = snapshot(*s.discriminator);
  const auto m = train_step(s, real_images(s.model));
  CHECK(s.step == 1);
  CHECK(s.discriminator_updates == 1);
  CHECK(s.generator_updates == 2);
  CHECK(m.step == 1);
  CHECK(std::isfinite(m.d_loss));
  CHECK(std::isfinite(m.g_loss));
  CHECK(m.style_loss > 0.0);
  CHECK(!same(g0, snapshot(*s.generator)));
  CHECK(!same(d0, snapshot(*s.discriminator)));
  train_step(s, real_images(s.model));
  CHECK(s.discriminator_updates == 2);
  CHECK(s.generator_updates == 4);

  // Adam step counts follow the update counters.
  const auto ckpt = to_checkpoint(s);
  CHECK(ckpt.metadata["optimizer_steps"]["generator"][0] == 4);
  CHECK(ckpt.metadata["optimizer_steps"]["discriminator"][0] == 2);
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  auto t = small_train();
  t.learning_rate = 0.0;
  auto s = make_state(tiny_config(), t);
  const auto g0 = snapshot(*s.generator);
  const auto d0 = snapshot(*s.discriminator);
  for (int i = 0; i < 3; ++i) train_step(s, real_images(s.model));
  CHECK(same(g0, snapshot(*s.generator)));
  CHECK(same(d0, snapshot(*s.discriminator)));
  CHECK(s.step == 3);
}

TEST_CASE("ablation switches drop their loss terms") {
  auto t = small_train();
  t.style_loss = false;
  t.position_regularizer = false;
  auto s = make_state(tiny_config(), t);
  const auto m = train_step(s, real_images(s.model));
  CHECK(m.style_loss == 0.0);
  CHECK(m.pos_loss == 0.0);
}

TEST_CASE("seeded training is reproducible and resumable") {
  CHECK(train_reproducible(10));
  CHECK(resume_equals_continuous(6, 3));
}

TEST_CASE("initialization") {
  auto toy = toy_scale(preset("balls_in_bowl").model);
  const auto a = make_state(toy, small_train(3));
  const auto b = make_state(toy, small_train(3));
  const auto c = make_state(toy, small_train(4));
  CHECK(parameter_checksum(*a.generator) == parameter_checksum(*b.generator));
  CHECK(parameter_checksum(*a.discriminator) == parameter_checksum(*b.discriminator));
  CHECK(parameter_checksum(*a.generator) != parameter_checksum(*c.generator));

  std::vector<torch::Tensor> weights;
  for (const auto* m : {static_cast<const torch::nn::Module*>(a.generator.get()),
                        static_cast<const torch::nn::Module*>(a.discriminator.get())})
    for (const auto& p : m->named_parameters()) {
      if (p.key().size() >= 4 && p.key().substr(p.key().size() - 4) == "bias") {
        CHECK(p.value().abs().max().item<double>() == 0.0);
      } else {
        weights.push_back(p.value().detach().flatten());
      }
    }
  const auto all = torch::cat(weights);
  CHECK(std::abs(all.mean().item<double>()) < 1e-3);
  CHECK(all.std().item<double>() == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("a non-finite loss aborts with a snapshot") {
  auto s = make_state(tiny_config(), small_train());
  const auto dir = relate::test::scratch_dir("diverge");
  s.diagnostics_dir = dir;
  auto real = real_images(s.model);
  real.index_put_({0, 0, 0, 0}, NAN);
  try {
    train_step(s, real);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(std::filesystem::exists(e.snapshot_path()));
    CHECK(load_checkpoint(e.snapshot_path()).model == s.model);
  }
  CHECK_THROWS_AS(train_step(s, torch::zeros({2, 3, 8, 8})), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training runs on a dataset, checkpoints and resumes") {
  const auto dir = relate::test::scratch_dir("train");
  const auto data = gen_balls_in_bowl(1, 12, 1, 16, dir / "data");
  const auto cfg = tiny_config();
  auto t = small_train(5);
  t.epochs = 2;
  t.max_steps = 4;
  t.checkpoint_every = 2;
  int seen = 0;
  TrainOptions opts{dir / "full", std::nullopt, [&](const StepMetrics&) { ++seen; }};
  const auto full = train(data, cfg, t, opts);
  CHECK(seen == 4);
  CHECK(planned_steps(data, t) == 4);
  CHECK(std::filesystem::exists(dir / "full" / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "full" / "checkpoint_2.ckpt"));
  CHECK(full.metadata.contains("created_at"));
  CHECK(full.metadata["step"] == 4);
  {
    std::ifstream csv(dir / "full" / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,d_loss,g_loss,style_loss,pos_loss,wall_time");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 4);
  }

  // Two steps, then two more from the saved state, over the same data stream.
  auto half = t;
  half.max_steps = 2;
  train(data, cfg, half, {.out_dir = dir / "part"});
  const auto resumed = train(data, cfg, t, {.out_dir = dir / "part", .resume = load_checkpoint(dir / "part" / "final.ckpt")});
  REQUIRE(resumed.tensors.size() == full.tensors.size());
  for (std::size_t i = 0; i < full.tensors.size(); ++i) {
    CAPTURE(full.tensors[i].first);
    CHECK(torch::equal(full.tensors[i].second, resumed.tensors[i].second));
  }
  CHECK(resumed.metadata["rng"] == full.metadata["rng"]);
  CHECK(resumed.metadata["data_position"] == full.metadata["data_position"]);

  SUBCASE("configuration mismatches are rejected before training") {
    auto wrong_side = cfg;
    wrong_side.image_side = 32;
    CHECK_THROWS_AS(train(data, wrong_side, t, {.out_dir = dir / "x"}), std::invalid_argument);
    CHECK_THROWS_AS(train(data, tiny_config(Variant::kDynamic), t, {.out_dir = dir / "x"}), std::invalid_argument);
  }
  std::filesystem::remove_all(dir);
}
