#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "relate/checkpoint.hpp"
#include "relate/trainer.hpp"
#include "support.hpp"

using namespace relate;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "relate");
  return cli::run(args);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("argument errors") {
  CHECK(run({}) == 106);
  CHECK(run({"frobnicate"}) != 0);
  CHECK(run({"sample", "--ckpt"}) != 0);
  CHECK(run({"datagen", "balls_in_bowl", "--out", "/tmp/x", "--bogus", "1"}) != 0);
  CHECK(run({"ablate", "--mode", "no-everything", "--config", "x", "--data", "y", "--out", "z"}) != 0);
}

TEST_CASE("run configuration files") {
  const auto run_cfg = cli::run_config_from_text("preset = balls_in_bowl\nscale = toy\ntrain.batch_size = 4\n");
  CHECK(run_cfg.model == toy_scale(preset("balls_in_bowl").model));
  CHECK(run_cfg.train.batch_size == 4);
  CHECK(cli::run_config_from_text("preset = shapestacks\nclip_length = 5\n").model.variant == Variant::kDynamic);
  CHECK_THROWS_AS(cli::run_config_from_text("colour = red\n"), std::invalid_argument);
  CHECK_THROWS_AS(cli::run_config_from_text("scale = huge\n"), std::invalid_argument);
}

TEST_CASE("datagen, train, ablate, sample, components and eval end to end") {
  const auto dir = relate::test::scratch_dir("cli");
  const auto d = dir.string();
  REQUIRE(run({"datagen", "balls_in_bowl", "--seed", "1", "--out", d + "/data", "--n-train", "8", "--n-test", "4",
               "--side", "16"}) == 0);
  CHECK(std::filesystem::exists(dir / "data" / "train" / "manifest.json"));

  TrainConfig t;
  t.batch_size = 2;
  t.max_steps = 2;
  std::ofstream(dir / "run.cfg") << to_config_text(checks::tiny_config(), t);
  REQUIRE(run({"train", "--config", d + "/run.cfg", "--data", d + "/data", "--out", d + "/full", "--log-every", "0"}) == 0);
  const auto ckpt = d + "/full/final.ckpt";
  CHECK(load_checkpoint(ckpt).metadata["step"] == 2);

  REQUIRE(run({"ablate", "--mode", "no-gamma", "--config", d + "/run.cfg", "--data", d + "/data", "--out", d + "/abl",
               "--max-steps", "1", "--log-every", "0"}) == 0);
  const auto abl = load_checkpoint(d + "/abl/final.ckpt");
  CHECK(abl.model.correction == CorrectionMode::kIdentity);
  CHECK(!abl.train.position_regularizer);
  CHECK(abl.metadata["step"] == 1);

  REQUIRE(run({"sample", "--ckpt", ckpt, "--n", "2", "--seed", "4", "--out-dir", d + "/s1"}) == 0);
  REQUIRE(run({"sample", "--ckpt", ckpt, "--n", "2", "--seed", "4", "--out-dir", d + "/s2"}) == 0);
  for (const char* f : {"sample_000.png", "sample_001.png", "samples.json"})
    CHECK(slurp(dir / "s1" / f) == slurp(dir / "s2" / f));

  REQUIRE(run({"components", "--ckpt", ckpt, "--k", "2", "--out-dir", d + "/c"}) == 0);
  for (const char* f : {"background.png", "object_000.png", "object_001.png", "composite.png", "scene.json"})
    CHECK(std::filesystem::exists(dir / "c" / f));

  CHECK(run({"rollout", "--ckpt", ckpt, "--out-dir", d + "/r"}) == 1);

  REQUIRE(run({"eval", "fid", "--ckpt", ckpt, "--data", d + "/data", "--n", "6", "--out", d + "/fid.json"}) == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "fid.json"));
  CHECK(report["metric"] == "fid_proxy");
  CHECK(report["n"] == 6);
  REQUIRE(run({"eval", "disentangle", "--ckpt", ckpt, "--n", "3", "--out", d + "/dis.json"}) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "dis.json"))["n"] == 9);
  CHECK(run({"eval", "fid", "--ckpt", ckpt}) == 1);
  std::filesystem::remove_all(dir);
}
