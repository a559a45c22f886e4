#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "relate/data.hpp"
#include "relate/errors.hpp"
#include "relate/image_io.hpp"
#include "support.hpp"

using namespace relate;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Centroid (pixel coordinates, centers at +0.5) of pixels within `tol` of
/// the color found at (px, py), searched in a square of half side `reach`.
std::pair<double, double> color_centroid(const Image8& img, double px, double py, int reach, int tol) {
  const int cx = static_cast<int>(px), cy = static_cast<int>(py);
  const auto* ref = img.pixel(cx, cy);
  double sx = 0.0, sy = 0.0, n = 0.0;
  for (int y = std::max(0, cy - reach); y <= std::min(img.height - 1, cy + reach); ++y)
    for (int x = std::max(0, cx - reach); x <= std::min(img.width - 1, cx + reach); ++x) {
      const auto* p = img.pixel(x, y);
      if (std::abs(p[0] - ref[0]) <= tol && std::abs(p[1] - ref[1]) <= tol && std::abs(p[2] - ref[2]) <= tol) {
        sx += x + 0.5;
        sy += y + 0.5;
        n += 1.0;
      }
    }
  return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("bowl physics") {
  SUBCASE("balls stay in the bowl and apart over 100 sequences") {
    int frames = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto rng = Rng::for_stream(77, s);
      auto w = PhysicsWorld::random(rng, 2);
      for (int f = 0; f < 40; ++f, ++frames) {
        if (f > 0) w.step();
        for (const auto& b : w.balls) CHECK(w.ellipse_value(b.p) <= 1.0);
        const double dx = w.balls[0].p.x - w.balls[1].p.x, dy = w.balls[0].p.y - w.balls[1].p.y;
        CHECK(std::hypot(dx, dy) >= 2 * w.radius - 1e-9);
        CHECK(w.valid());
      }
    }
    CHECK(frames == 4000);
  }
  SUBCASE("energy never increases") {
    for (std::uint64_t s = 0; s < 30; ++s) {
      auto rng = Rng::for_stream(78, s);
      auto w = PhysicsWorld::random(rng, 2);
      double e = w.energy();
      for (int f = 0; f < 60; ++f) {
        w.step();
        CHECK(w.energy() <= e * (1 + 1e-9) + 1e-12);
        e = w.energy();
      }
    }
  }
}

TEST_CASE("traffic") {
  SUBCASE("same-lane cars never overlap") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto rng = Rng::for_stream(91, s);
      auto w = TrafficWorld::random(rng, rng.uniform_int(1, 5));
      CHECK((w.cars.size() >= 1 && w.cars.size() <= 5));
      for (int f = 0; f < 40; ++f) {
        if (f > 0) w.step(rng);
        for (std::size_t i = 0; i < w.cars.size(); ++i) CHECK(w.headway(i) >= 0.0);
      }
    }
  }
  SUBCASE("a lone car drives at its free speed") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto rng = Rng::for_stream(92, s);
      auto w = TrafficWorld::random(rng, 1);
      w.turn_probability = 0.0;
      w.cars[0].speed = w.cars[0].free_speed;
      for (int f = 0; f < 50; ++f) {
        const double before = w.cars[0].s;
        w.step(rng);
        CHECK(w.cars[0].speed == w.cars[0].free_speed);
        const double moved = wrap_lane(w.cars[0].s - before);
        CHECK(moved == doctest::Approx(w.cars[0].free_speed).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("generated datasets") {
  const auto dir = relate::test::scratch_dir("data");

  SUBCASE("balls: manifest, counts and center bookkeeping") {
    const auto [train, test] = generate_dataset("balls_in_bowl", 3, 6, 3, 4, 32, dir / "balls");
    CHECK(train.items.size() == 6);
    CHECK(test.items.size() == 3);
    CHECK(train.variant == Variant::kDynamic);
    CHECK(train.frames_per_item() == 4);
    std::set<std::string> ids;
    for (const auto& it : train.items) ids.insert(it.id);
    for (const auto& it : test.items) CHECK(ids.count(it.id) == 0);

    const auto loaded = load_manifest(dir / "balls" / "train");
    CHECK(manifest_to_json(loaded) == manifest_to_json(train));

    int checked = 0;
    for (const auto& it : train.items)
      for (std::size_t f = 0; f < it.frames.size(); ++f) {
        const auto img = read_png(train.root / it.frames[f]);
        for (const auto& c : it.centers[f]) {
          CHECK(std::abs(c.x) <= 1.0);
          CHECK(std::abs(c.y) <= 1.0);
          const auto [px, py] = pose_to_pixel(c, 32);
          if (px < 4 || py < 4 || px > 28 || py > 28) continue;  // disc may be clipped by the border
          const auto [gx, gy] = color_centroid(img, px, py, 4, 2);
          CHECK(std::hypot(gx - px, gy - py) <= 1.0);
          ++checked;
        }
      }
    CHECK(checked > 10);
  }

  SUBCASE("stacks: heights, distinct colors and unit offsets") {
    const auto m = gen_stacks(5, 200, 64, dir / "stacks");
    std::map<int, int> heights;
    for (const auto& it : m.items) {
      ++heights[it.count];
      const auto& c = it.centers.front();
      REQUIRE(static_cast<int>(c.size()) == it.count);
      const auto img = read_png(m.root / it.frames.front());
      std::set<std::array<std::uint8_t, 3>> colors;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (k > 0) {
          CHECK(c[k].x == c[k - 1].x);
          CHECK(std::abs(c[k].y - c[k - 1].y) == doctest::Approx(0.2).epsilon(1e-12));
        }
        const auto [px, py] = pose_to_pixel(c[k], 64);
        const auto* p = img.pixel(static_cast<int>(px), static_cast<int>(py));
        colors.insert({p[0], p[1], p[2]});
        const auto [gx, gy] = color_centroid(img, px, py, 6, 2);
        CHECK(std::hypot(gx - px, gy - py) <= 1.0);
      }
      CHECK(static_cast<int>(colors.size()) == it.count);
    }
    CHECK(heights.size() == 4);
    for (const auto& [h, n] : heights) {
      CHECK((h >= 2 && h <= 5));
      CHECK(n > 30);
    }
  }

  SUBCASE("traffic: K within 1..5") {
    const auto m = gen_traffic_like(6, 20, 3, 32, dir / "traffic");
    for (const auto& it : m.items) {
      CHECK((it.count >= 1 && it.count <= 5));
      for (const auto& f : it.centers) CHECK(static_cast<int>(f.size()) == it.count);
    }
  }

  SUBCASE("regeneration reproduces every file") {
    gen_stacks(9, 5, 32, dir / "a");
    gen_stacks(9, 5, 32, dir / "b");
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
    for (const auto& e : std::filesystem::directory_iterator(dir / "a" / "images"))
      CHECK(slurp(e.path()) == slurp(dir / "b" / "images" / e.path().filename()));
    gen_stacks(10, 5, 32, dir / "c");
    CHECK(slurp(dir / "a" / "images" / "train-000000_000.png") != slurp(dir / "c" / "images" / "train-000000_000.png"));
  }

  SUBCASE("loader") {
    const auto m = gen_balls_in_bowl(4, 10, 15, 32, dir / "seq");
    BatchLoader a(m, 3, 15, 1), b(m, 3, 15, 1), c(m, 3, 15, 2);
    CHECK(a.batches_per_epoch() == 3);
    bool differs = false;
    for (int i = 0; i < 7; ++i) {
      const auto x = a.next();
      CHECK(x.sizes() == torch::IntArrayRef({3, 45, 32, 32}));
      CHECK(x.min().item<double>() >= -1.0);
      CHECK(x.max().item<double>() <= 1.0);
      CHECK(torch::equal(x, b.next()));
      differs = differs || !torch::equal(x, c.next());
    }
    CHECK(differs);

    BatchLoader d(m, 3, 15, 1);
    d.seek(a.epoch(), a.position());
    CHECK(torch::equal(a.next(), d.next()));

    BatchLoader single(m, 2, 1, 0);
    CHECK(single.next().size(1) == 3);
  }

  SUBCASE("missing or corrupt frames are a corrupt dataset") {
    auto m = gen_stacks(11, 3, 32, dir / "broken");
    std::filesystem::remove(m.root / m.items[1].frames[0]);
    CHECK_THROWS_AS(load_manifest(dir / "broken"), DatasetCorrupt);

    auto m2 = gen_stacks(12, 3, 32, dir / "garbled");
    {
      std::ofstream out(m2.root / m2.items[0].frames[0], std::ios::binary | std::ios::trunc);
      out << "\x89PNG\r\n\x1a\n not really";
    }
    CHECK_THROWS_AS(load_all_frames(load_manifest(dir / "garbled")), DatasetCorrupt);

    std::ofstream(dir / "bad.json") << R"({"schema": "something-else", "version": 1})";
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), DatasetCorrupt);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("png round trip") {
  Image8 img{5, 3, std::vector<std::uint8_t>(45)};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 5);
  CHECK(decode_png(encode_png(img)) == img);
  CHECK_THROWS_AS(decode_png("definitely not a png"), std::runtime_error);
  auto truncated = encode_png(img);
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(decode_png(truncated), std::runtime_error);

  const auto t = torch::tensor({-1.0f, 0.0f, 1.0f}).reshape({3, 1, 1});
  const auto q = to_image8(t);
  CHECK(q.rgb == std::vector<std::uint8_t>{0, 128, 255});
  CHECK(to_tensor(q).sizes() == torch::IntArrayRef({3, 1, 1}));
}
