#include <fstream>

#include "relate/checkpoint.hpp"
#include "relate/errors.hpp"
#include "relate/trainer.hpp"
#include "support.hpp"

using namespace relate;
using namespace relate::checks;

namespace {

ModelCheckpoint small_checkpoint() {
  ModelCheckpoint c;
  c.model = tiny_config();
  c.train.batch_size = 4;
  c.tensors.emplace_back("a/weight", torch::arange(6, torch::kFloat32).reshape({2, 3}));
  c.tensors.emplace_back("b/bias", torch::tensor({1.5f, -2.25f}));
  c.tensors.emplace_back("c/scalar", torch::tensor(3.0f));
  c.metadata = {{"step", 12}, {"note", "x"}};
  return c;
}

}  // namespace

TEST_CASE("checkpoint encoding round-trips byte for byte") {
  const auto bytes = encode_checkpoint(small_checkpoint());
  const auto back = decode_checkpoint(bytes);
  CHECK(back.model == tiny_config());
  CHECK(back.train.batch_size == 4);
  CHECK(back.metadata == small_checkpoint().metadata);
  REQUIRE(back.tensors.size() == 3);
  CHECK(torch::equal(back.tensor("b/bias"), torch::tensor({1.5f, -2.25f})));
  CHECK(back.tensor("c/scalar").dim() == 0);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(!back.has_tensor("zzz"));
  CHECK_THROWS_AS(back.tensor("zzz"), CorruptCheckpoint);
}

TEST_CASE("archive is a plain tar with the documented members") {
  const auto bytes = encode_checkpoint(small_checkpoint());
  CHECK(bytes.size() % 512 == 0);
  CHECK(bytes.substr(0, 7) == "VERSION");
  CHECK(bytes.substr(257, 5) == "ustar");
  for (const char* member : {"config.txt", "index.json", "meta.json", "tensors/000000.f32"})
    CHECK(bytes.find(member) != std::string::npos);
}

TEST_CASE("a full training state survives save and load") {
  const auto dir = relate::test::scratch_dir("ckpt");
  CHECK(checkpoint_round_trip(dir));
  std::filesystem::remove_all(dir);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto bytes = encode_checkpoint(small_checkpoint());
  SUBCASE("unknown version") {
    auto v = bytes;
    REQUIRE(v[512] == '1');
    v[512] = '7';
    try {
      decode_checkpoint(v);
      FAIL("expected UnsupportedVersion");
    } catch (const UnsupportedVersion& e) {
      CHECK(e.found() == 7);
      CHECK(e.expected() == kCheckpointVersion);
    }
  }
  SUBCASE("truncation") {
    for (std::size_t cut : {bytes.size() - 1, bytes.size() - 1024, bytes.size() / 2, std::size_t{100}})
      CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), CorruptCheckpoint);
  }
  SUBCASE("header checksum") {
    auto v = bytes;
    v[3] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(v), CorruptCheckpoint);
  }
  SUBCASE("garbage") {
    CHECK_THROWS_AS(decode_checkpoint(std::string(2048, '\0')), CorruptCheckpoint);
    CHECK_THROWS_AS(decode_checkpoint("hello"), CorruptCheckpoint);
  }
  SUBCASE("missing file") {
    CHECK_THROWS(load_checkpoint("/nonexistent/path/x.ckpt"));
  }
}

TEST_CASE("load_state demands every tensor with the right shape") {
  const auto cfg = tiny_config();
  GeneratorModel a(cfg);
  randomize(*a, 1, 0.1);
  ModelCheckpoint ckpt;
  ckpt.model = cfg;
  ckpt.tensors = named_state(*a, "generator/");
  GeneratorModel b(cfg);
  load_state(*b, ckpt, "generator/");
  CHECK(parameter_checksum(*a) == parameter_checksum(*b));

  auto wider = cfg;
  wider.channels = 8;
  GeneratorModel c(wider);
  CHECK_THROWS_AS(load_state(*c, ckpt, "generator/"), CorruptCheckpoint);

  ckpt.tensors.pop_back();
  CHECK_THROWS_AS(load_state(*b, ckpt, "generator/"), CorruptCheckpoint);
}

TEST_CASE("the embedded config rebuilds every shape") {
  auto state = make_state(tiny_config(Variant::kDynamic), TrainConfig{});
  const auto ckpt = decode_checkpoint(encode_checkpoint(to_checkpoint(state)));
  const auto g = generator_from_checkpoint(ckpt);
  CHECK(g->config == state.model);
  CHECK(parameter_checksum(*g) == parameter_checksum(*state.generator));
  CHECK(!g->is_training());
}
