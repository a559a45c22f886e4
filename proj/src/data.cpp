#include "relate/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

#include "relate/errors.hpp"

namespace relate {
namespace {

std::string variant_name(Variant v) { return to_string(v); }

std::string item_id(const std::string& split, int index) {
  std::ostringstream s;
  s << split << '-' << std::setw(6) << std::setfill('0') << index;
  return s.str();
}

std::string frame_path(const std::string& id, int frame) {
  std::ostringstream s;
  s << "images/" << id << '_' << std::setw(3) << std::setfill('0') << frame << ".png";
  return s.str();
}

/// Image-frame normalized point (y down) -> pose frame.
Pose to_pose(Pose world) { return {-world.x, -world.y}; }

void shuffle(std::vector<std::int64_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

DatasetManifest start_manifest(const std::string& name, Variant variant, int side, std::uint64_t seed,
                               const std::string& split, int k_min, int k_max, const std::filesystem::path& out_dir) {
  if (side < 4) throw std::invalid_argument("image side must be at least 4");
  DatasetManifest m;
  m.name = name;
  m.variant = variant;
  m.image_side = side;
  m.seed = seed;
  m.split = split;
  m.k_min = k_min;
  m.k_max = k_max;
  m.root = out_dir;
  std::filesystem::create_directories(out_dir / "images");
  return m;
}

const std::vector<Rgb>& block_palette() {
  static const std::vector<Rgb> p{{0.90, 0.20, 0.20}, {0.20, 0.70, 0.25}, {0.20, 0.35, 0.90},
                                  {0.95, 0.85, 0.15}, {0.75, 0.25, 0.85}, {0.15, 0.80, 0.85},
                                  {0.95, 0.55, 0.10}, {0.95, 0.95, 0.95}};
  return p;
}

}  // namespace

int DatasetManifest::frames_per_item() const { return items.empty() ? 0 : static_cast<int>(items.front().frames.size()); }

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items) {
    nlohmann::json centers = nlohmann::json::array();
    for (const auto& frame : it.centers) {
      nlohmann::json f = nlohmann::json::array();
      for (const auto& c : frame) f.push_back({c.x, c.y});
      centers.push_back(f);
    }
    items.push_back({{"id", it.id}, {"count", it.count}, {"frames", it.frames}, {"centers", centers}});
  }
  return {{"schema", kManifestSchema}, {"version", kManifestVersion}, {"name", m.name},
          {"variant", variant_name(m.variant)}, {"image_side", m.image_side}, {"seed", m.seed},
          {"split", m.split}, {"k_min", m.k_min}, {"k_max", m.k_max}, {"items", items}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root) {
  DatasetManifest m;
  try {
    if (j.at("schema").get<std::string>() != kManifestSchema) throw DatasetCorrupt("not a dataset manifest");
    if (j.at("version").get<int>() != kManifestVersion)
      throw DatasetCorrupt("unsupported manifest version " + std::to_string(j.at("version").get<int>()));
    m.name = j.at("name").get<std::string>();
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.image_side = j.at("image_side").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split = j.at("split").get<std::string>();
    m.k_min = j.at("k_min").get<int>();
    m.k_max = j.at("k_max").get<int>();
    m.root = root;
    for (const auto& e : j.at("items")) {
      ManifestItem it;
      it.id = e.at("id").get<std::string>();
      it.count = e.at("count").get<int>();
      it.frames = e.at("frames").get<std::vector<std::string>>();
      for (const auto& frame : e.at("centers")) {
        std::vector<Pose> f;
        for (const auto& c : frame) f.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        it.centers.push_back(std::move(f));
      }
      m.items.push_back(std::move(it));
    }
  } catch (const DatasetCorrupt&) {
    throw;
  } catch (const std::exception& ex) {
    throw DatasetCorrupt(std::string("malformed manifest: ") + ex.what());
  }
  for (const auto& it : m.items) {
    if (it.frames.empty()) throw DatasetCorrupt("item " + it.id + " has no frames");
    if (it.centers.size() != it.frames.size()) throw DatasetCorrupt("item " + it.id + ": one center list per frame required");
    if (it.count < m.k_min || it.count > m.k_max) throw DatasetCorrupt("item " + it.id + ": object count out of bounds");
    for (const auto& frame : it.centers) {
      if (static_cast<int>(frame.size()) != it.count) throw DatasetCorrupt("item " + it.id + ": center count mismatch");
      for (const auto& c : frame)
        if (!(std::abs(c.x) <= 1.0 && std::abs(c.y) <= 1.0))
          throw DatasetCorrupt("item " + it.id + ": center outside [-1, 1]^2");
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& m) {
  std::filesystem::create_directories(m.root);
  std::ofstream out(m.root / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + m.root.string());
  out << manifest_to_json(m).dump(1) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream in(file);
  if (!in) throw DatasetCorrupt("cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw DatasetCorrupt("manifest " + file.string() + " is not valid JSON: " + ex.what());
  }
  auto m = manifest_from_json(j, file.parent_path());
  for (const auto& it : m.items)
    for (const auto& f : it.frames)
      if (!std::filesystem::is_regular_file(m.root / f)) throw DatasetCorrupt("missing frame file " + (m.root / f).string());
  return m;
}

// ---- Raster ----------------------------------------------------------------

Raster::Raster(int side, int supersample)
    : side_(side), ss_(supersample), fine_(side * supersample), px_(static_cast<std::size_t>(fine_) * fine_) {
  if (side < 1 || supersample < 1) throw std::invalid_argument("Raster: side and supersample must be positive");
}

double Raster::to_fine(double u) const { return (u + 1.0) * 0.5 * fine_; }
double Raster::from_fine(double px) const { return px / (0.5 * fine_) - 1.0; }

template <typename Inside>
void Raster::paint(double x0, double y0, double x1, double y1, Inside inside) {
  const int i0 = std::max(0, static_cast<int>(std::floor(to_fine(x0))));
  const int i1 = std::min(fine_ - 1, static_cast<int>(std::ceil(to_fine(x1))));
  const int j0 = std::max(0, static_cast<int>(std::floor(to_fine(y0))));
  const int j1 = std::min(fine_ - 1, static_cast<int>(std::ceil(to_fine(y1))));
  for (int j = j0; j <= j1; ++j) {
    const double v = from_fine(j + 0.5);
    for (int i = i0; i <= i1; ++i) {
      const double u = from_fine(i + 0.5);
      if (auto c = inside(u, v)) px_[static_cast<std::size_t>(j) * fine_ + i] = *c;
    }
  }
}

void Raster::fill(const Rgb& c) { std::fill(px_.begin(), px_.end(), c); }

void Raster::disc(double cx, double cy, double r, const Rgb& c) {
  paint(cx - r, cy - r, cx + r, cy + r, [&](double u, double v) -> std::optional<Rgb> {
    if ((u - cx) * (u - cx) + (v - cy) * (v - cy) <= r * r) return c;
    return std::nullopt;
  });
}

void Raster::rect(double cx, double cy, double hx, double hy, const Rgb& c) {
  paint(cx - hx, cy - hy, cx + hx, cy + hy, [&](double u, double v) -> std::optional<Rgb> {
    if (std::abs(u - cx) <= hx && std::abs(v - cy) <= hy) return c;
    return std::nullopt;
  });
}

void Raster::shaded_ellipse(double cx, double cy, double a, double b, double angle, const Rgb& center_color,
                            const Rgb& edge_color) {
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  const double r = std::max(a, b);
  paint(cx - r, cy - r, cx + r, cy + r, [&](double u, double v) -> std::optional<Rgb> {
    const double dx = u - cx;
    const double dy = v - cy;
    const double x = ca * dx + sa * dy;
    const double y = -sa * dx + ca * dy;
    const double q = (x / a) * (x / a) + (y / b) * (y / b);
    if (q > 1.0) return std::nullopt;
    Rgb out;
    for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(k)] = center_color[static_cast<std::size_t>(k)] * (1.0 - q) + edge_color[static_cast<std::size_t>(k)] * q;
    return out;
  });
}

Image8 Raster::resolve() const {
  Image8 img;
  img.width = side_;
  img.height = side_;
  img.rgb.resize(3 * static_cast<std::size_t>(side_) * side_);
  const double norm = 1.0 / (ss_ * ss_);
  for (int y = 0; y < side_; ++y) {
    for (int x = 0; x < side_; ++x) {
      Rgb acc{0.0, 0.0, 0.0};
      for (int j = 0; j < ss_; ++j)
        for (int i = 0; i < ss_; ++i) {
          const auto& p = px_[static_cast<std::size_t>(y * ss_ + j) * fine_ + (x * ss_ + i)];
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
        }
      auto* out = img.pixel(x, y);
      for (int k = 0; k < 3; ++k)
        out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(acc[static_cast<std::size_t>(k)] * norm, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

// ---- PhysicsWorld ----------------------------------------------------------

Pose PhysicsWorld::to_bowl(Pose p) const {
  const double dx = p.x - cx;
  const double dy = p.y - cy;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  return {ca * dx + sa * dy, -sa * dx + ca * dy};
}

double PhysicsWorld::ellipse_value(Pose p) const {
  const auto q = to_bowl(p);
  return (q.x / a) * (q.x / a) + (q.y / b) * (q.y / b);
}

double PhysicsWorld::inner_value(Pose p) const {
  const auto q = to_bowl(p);
  const double ia = a - radius;
  const double ib = b - radius;
  return (q.x / ia) * (q.x / ia) + (q.y / ib) * (q.y / ib);
}

double PhysicsWorld::kinetic_energy() const {
  double e = 0.0;
  for (const auto& ball : balls) e += 0.5 * (ball.v.x * ball.v.x + ball.v.y * ball.v.y);
  return e;
}

double PhysicsWorld::potential_energy() const {
  double e = 0.0;
  for (const auto& ball : balls) {
    const double dx = ball.p.x - cx;
    const double dy = ball.p.y - cy;
    e += 0.5 * gravity * (dx * dx + dy * dy);
  }
  return e;
}

bool PhysicsWorld::valid() const {
  for (std::size_t i = 0; i < balls.size(); ++i) {
    if (inner_value(balls[i].p) > 1.0) return false;
    for (std::size_t j = i + 1; j < balls.size(); ++j) {
      const double dx = balls[i].p.x - balls[j].p.x;
      const double dy = balls[i].p.y - balls[j].p.y;
      if (std::sqrt(dx * dx + dy * dy) < 2.0 * radius) return false;
    }
  }
  return true;
}

namespace {

constexpr double kSeparationSlack = 1e-9;

/// Exact flow of the isotropic harmonic potential for time h.
void harmonic_flow(Ball& ball, double cx, double cy, double omega, double h) {
  const double c = std::cos(omega * h);
  const double s = std::sin(omega * h);
  const double dx = ball.p.x - cx;
  const double dy = ball.p.y - cy;
  ball.p = {cx + dx * c + ball.v.x / omega * s, cy + dy * c + ball.v.y / omega * s};
  ball.v = {-dx * omega * s + ball.v.x * c, -dy * omega * s + ball.v.y * c};
}

}  // namespace

void PhysicsWorld::step() {
  const double h = dt / substeps;
  const double omega = std::sqrt(gravity);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  const double ia = a - radius;
  const double ib = b - radius;

  auto resolve_wall = [&](Ball& ball) {
    const double q = inner_value(ball.p);
    if (q <= 1.0) return;
    auto local = to_bowl(ball.p);
    const double scale = 1.0 / std::sqrt(q) * (1.0 - kSeparationSlack);
    local = {local.x * scale, local.y * scale};
    ball.p = {cx + ca * local.x - sa * local.y, cy + sa * local.x + ca * local.y};
    double nx = local.x / (ia * ia);
    double ny = local.y / (ib * ib);
    const double len = std::hypot(nx, ny);
    nx /= len;
    ny /= len;
    const Pose n{ca * nx - sa * ny, sa * nx + ca * ny};
    const double vn = ball.v.x * n.x + ball.v.y * n.y;
    if (vn > 0.0) ball.v = {ball.v.x - (1.0 + restitution) * vn * n.x, ball.v.y - (1.0 + restitution) * vn * n.y};
  };

  auto resolve_pair = [&](Ball& p, Ball& q) {
    double dx = p.p.x - q.p.x;
    double dy = p.p.y - q.p.y;
    const double dist = std::hypot(dx, dy);
    if (dist >= 2.0 * radius) return;
    if (dist > 0.0) {
      dx /= dist;
      dy /= dist;
    } else {
      dx = 1.0;
      dy = 0.0;
    }
    const double push = 0.5 * (2.0 * radius - dist) * (1.0 + kSeparationSlack) + kSeparationSlack;
    p.p = {p.p.x + push * dx, p.p.y + push * dy};
    q.p = {q.p.x - push * dx, q.p.y - push * dy};
    const double rel = (p.v.x - q.v.x) * dx + (p.v.y - q.v.y) * dy;
    if (rel < 0.0) {
      const double j = 0.5 * (1.0 + restitution) * rel;
      p.v = {p.v.x - j * dx, p.v.y - j * dy};
      q.v = {q.v.x + j * dx, q.v.y + j * dy};
    }
  };

  for (int sub = 0; sub < substeps; ++sub) {
    const auto before = balls;
    const double energy_before = energy();
    for (auto& ball : balls) harmonic_flow(ball, cx, cy, omega, h);
    for (int iter = 0; iter < 16 && !valid(); ++iter) {
      for (auto& ball : balls) resolve_wall(ball);
      for (std::size_t i = 0; i < balls.size(); ++i)
        for (std::size_t j = i + 1; j < balls.size(); ++j) resolve_pair(balls[i], balls[j]);
      for (auto& ball : balls) resolve_wall(ball);
    }
    // Position corrections can lift a ball in the potential; take the excess
    // out of the kinetic energy so contacts never add energy.
    if (valid() && energy() > energy_before) {
      const double room = energy_before - potential_energy();
      const double kinetic = kinetic_energy();
      if (room > 0.0 && kinetic > 0.0) {
        const double f = std::sqrt(room / kinetic) * (1.0 - 1e-12);
        for (auto& ball : balls) ball.v = {ball.v.x * f, ball.v.y * f};
      }
    }
    if (!valid() || energy() > energy_before) {
      balls = before;
      for (auto& ball : balls) ball.v = {-ball.v.x, -ball.v.y};
    }
  }
}

PhysicsWorld PhysicsWorld::random(Rng& rng, int n_balls) {
  PhysicsWorld w;
  w.a = rng.uniform(0.62, 0.9);
  w.b = rng.uniform(0.5, 0.8);
  w.angle = rng.uniform(0.0, std::numbers::pi);
  w.cx = rng.uniform(-0.08, 0.08);
  w.cy = rng.uniform(-0.08, 0.08);
  w.gravity = 40.0;
  static const std::vector<Rgb> colors{{0.92, 0.18, 0.15}, {0.15, 0.35, 0.95}, {0.15, 0.8, 0.25},
                                       {0.95, 0.85, 0.1}, {0.8, 0.2, 0.8}};
  const double ia = w.a - w.radius;
  const double ib = w.b - w.radius;
  const double ca = std::cos(w.angle);
  const double sa = std::sin(w.angle);
  for (int attempt = 0; attempt < 10000 && static_cast<int>(w.balls.size()) < n_balls; ++attempt) {
    const double r = std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double lx = r * ia * std::cos(phi);
    const double ly = r * ib * std::sin(phi);
    Ball ball;
    ball.p = {w.cx + ca * lx - sa * ly, w.cy + sa * lx + ca * ly};
    ball.v = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    ball.color = colors[w.balls.size() % colors.size()];
    w.balls.push_back(ball);
    if (!w.valid()) w.balls.pop_back();
  }
  if (static_cast<int>(w.balls.size()) != n_balls) throw std::runtime_error("could not place balls in the bowl");
  return w;
}

// ---- TrafficWorld ----------------------------------------------------------

double wrap_lane(double s) {
  double r = std::fmod(s + 1.0, TrafficWorld::kLaneLength);
  if (r < 0.0) r += TrafficWorld::kLaneLength;
  return r - 1.0;
}

namespace {

constexpr double kLaneOffset = 0.12;

bool horizontal(int lane) { return lane < 2; }

/// Forward cyclic distance from s0 to s1 along a lane, in [0, L).
double forward_distance(double s0, double s1) {
  double d = std::fmod(s1 - s0, TrafficWorld::kLaneLength);
  if (d < 0.0) d += TrafficWorld::kLaneLength;
  return d;
}

}  // namespace

Pose TrafficWorld::direction(int lane) {
  switch (lane) {
    case 0: return {1.0, 0.0};
    case 1: return {-1.0, 0.0};
    case 2: return {0.0, 1.0};
    default: return {0.0, -1.0};
  }
}

Pose TrafficWorld::center(const Car& c) const {
  switch (c.lane) {
    case 0: return {c.s, kLaneOffset};
    case 1: return {-c.s, -kLaneOffset};
    case 2: return {-kLaneOffset, c.s};
    default: return {kLaneOffset, -c.s};
  }
}

std::optional<std::pair<double, double>> TrafficWorld::crossing(int from, int to) {
  if (horizontal(from) == horizontal(to)) return std::nullopt;
  const int h = horizontal(from) ? from : to;
  const int v = horizontal(from) ? to : from;
  const double y = h == 0 ? kLaneOffset : -kLaneOffset;
  const double x = v == 2 ? -kLaneOffset : kLaneOffset;
  auto coord = [&](int lane) {
    switch (lane) {
      case 0: return x;
      case 1: return -x;
      case 2: return y;
      default: return -y;
    }
  };
  return std::make_pair(coord(from), coord(to));
}

double TrafficWorld::headway(std::size_t i) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cars.size(); ++j) {
    if (j == i || cars[j].lane != cars[i].lane) continue;
    best = std::min(best, forward_distance(cars[i].s, cars[j].s) - car_length);
  }
  return best;
}

void TrafficWorld::step(Rng& rng) {
  std::vector<double> next_speed(cars.size());
  for (std::size_t i = 0; i < cars.size(); ++i) {
    double v = std::min(cars[i].speed + accel, cars[i].free_speed);
    v = std::min(v, std::max(0.0, headway(i) - min_gap));
    next_speed[i] = v;
  }
  for (std::size_t i = 0; i < cars.size(); ++i) {
    auto& car = cars[i];
    const double old_s = car.s;
    car.speed = next_speed[i];
    car.s = wrap_lane(old_s + car.speed);
    if (car.speed <= 0.0) continue;
    // Possible turn at a crossing passed during this move.
    const double roll = rng.uniform();
    const int pick = rng.uniform_int(0, 1);
    const int target = horizontal(car.lane) ? 2 + pick : pick;
    const auto cross = crossing(car.lane, target);
    if (!cross || roll >= turn_probability) continue;
    const double travelled = forward_distance(old_s, cross->first);
    if (travelled >= car.speed) continue;
    const double candidate = wrap_lane(cross->second + (car.speed - travelled));
    bool space = true;
    for (std::size_t j = 0; j < cars.size(); ++j) {
      if (j == i || cars[j].lane != target) continue;
      const double d = std::min(forward_distance(candidate, cars[j].s), forward_distance(cars[j].s, candidate));
      if (d < car_length + min_gap) space = false;
    }
    if (space) {
      car.lane = target;
      car.s = candidate;
    }
  }
}

TrafficWorld TrafficWorld::random(Rng& rng, int n_cars) {
  TrafficWorld w;
  const auto& palette = block_palette();
  std::vector<std::int64_t> colors(palette.size());
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<std::int64_t>(i);
  shuffle(colors, rng);
  for (int attempt = 0; attempt < 10000 && static_cast<int>(w.cars.size()) < n_cars; ++attempt) {
    Car c;
    c.lane = rng.uniform_int(0, kLanes - 1);
    c.s = rng.uniform(-1.0, 1.0);
    c.free_speed = rng.uniform(0.03, 0.07);
    c.speed = c.free_speed;
    c.color = palette[static_cast<std::size_t>(colors[w.cars.size() % colors.size()])];
    bool ok = true;
    for (const auto& o : w.cars) {
      if (o.lane != c.lane) continue;
      const double d = std::min(forward_distance(c.s, o.s), forward_distance(o.s, c.s));
      if (d < w.car_length + w.min_gap) ok = false;
    }
    if (ok) w.cars.push_back(c);
  }
  if (static_cast<int>(w.cars.size()) != n_cars) throw std::runtime_error("could not place cars");
  return w;
}

// ---- Generators ------------------------------------------------------------

namespace {

Image8 draw_bowl(const PhysicsWorld& w, int side) {
  Raster r(side);
  r.fill({0.12, 0.12, 0.14});
  r.shaded_ellipse(w.cx, w.cy, w.a, w.b, w.angle, {0.88, 0.84, 0.74}, {0.5, 0.46, 0.4});
  for (const auto& ball : w.balls) r.disc(ball.p.x, ball.p.y, w.radius, ball.color);
  return r.resolve();
}

Image8 draw_traffic(const TrafficWorld& w, int side) {
  Raster r(side);
  r.fill({0.3, 0.52, 0.28});
  r.rect(0.0, 0.0, 1.0, 0.27, {0.36, 0.36, 0.38});
  r.rect(0.0, 0.0, 0.27, 1.0, {0.36, 0.36, 0.38});
  for (const auto& car : w.cars) {
    const auto c = w.center(car);
    const double hl = 0.5 * w.car_length;
    const double hw = 0.5 * w.car_width;
    if (horizontal(car.lane)) {
      r.rect(c.x, c.y, hl, hw, car.color);
    } else {
      r.rect(c.x, c.y, hw, hl, car.color);
    }
  }
  return r.resolve();
}

}  // namespace

DatasetManifest gen_balls_in_bowl(std::uint64_t seed, int n_sequences, int frames_per_seq, int image_side,
                                  const std::filesystem::path& out_dir, const std::string& split) {
  if (frames_per_seq < 1) throw std::invalid_argument("gen_balls_in_bowl: frames must be at least 1");
  if (n_sequences < 0) throw std::invalid_argument("gen_balls_in_bowl: negative sequence count");
  auto m = start_manifest("balls_in_bowl", frames_per_seq > 1 ? Variant::kDynamic : Variant::kGeneral, image_side,
                          seed, split, 2, 2, out_dir);
  for (int s = 0; s < n_sequences; ++s) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(s));
    auto world = PhysicsWorld::random(rng, 2);
    ManifestItem item;
    item.id = item_id(split, s);
    item.count = 2;
    for (int f = 0; f < frames_per_seq; ++f) {
      if (f > 0) world.step();
      const auto path = frame_path(item.id, f);
      write_png(out_dir / path, draw_bowl(world, image_side));
      item.frames.push_back(path);
      std::vector<Pose> centers;
      for (const auto& ball : world.balls) centers.push_back(to_pose(ball.p));
      item.centers.push_back(std::move(centers));
    }
    m.items.push_back(std::move(item));
  }
  save_manifest(m);
  return m;
}

DatasetManifest gen_stacks(std::uint64_t seed, int n_images, int image_side, const std::filesystem::path& out_dir,
                           const std::string& split) {
  if (n_images < 0) throw std::invalid_argument("gen_stacks: negative image count");
  auto m = start_manifest("stacks", Variant::kOrdered, image_side, seed, split, 2, 5, out_dir);
  constexpr double kGround = 0.8;
  constexpr double kHalfHeight = 0.1;
  for (int n = 0; n < n_images; ++n) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(n));
    const int height = rng.uniform_int(2, 5);
    const double x = rng.uniform(-0.5, 0.5);
    std::vector<std::int64_t> colors(block_palette().size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<std::int64_t>(i);
    shuffle(colors, rng);
    const Rgb wall{rng.uniform(0.55, 0.75), rng.uniform(0.55, 0.75), rng.uniform(0.55, 0.75)};
    Raster r(image_side);
    r.fill(wall);
    r.rect(0.0, 0.5 * (kGround + 1.0), 1.0, 0.5 * (1.0 - kGround), {0.35, 0.3, 0.25});
    ManifestItem item;
    item.id = item_id(split, n);
    item.count = height;
    std::vector<Pose> centers;
    for (int k = 0; k < height; ++k) {
      const double half_width = rng.uniform(0.13, 0.2);
      const double y = kGround - kHalfHeight - 2.0 * kHalfHeight * k;
      r.rect(x, y, half_width, kHalfHeight, block_palette()[static_cast<std::size_t>(colors[static_cast<std::size_t>(k)])]);
      centers.push_back(to_pose({x, y}));
    }
    const auto path = frame_path(item.id, 0);
    write_png(out_dir / path, r.resolve());
    item.frames.push_back(path);
    item.centers.push_back(std::move(centers));
    m.items.push_back(std::move(item));
  }
  save_manifest(m);
  return m;
}

DatasetManifest gen_traffic_like(std::uint64_t seed, int n_sequences, int frames_per_seq, int image_side,
                                 const std::filesystem::path& out_dir, const std::string& split) {
  if (frames_per_seq < 1) throw std::invalid_argument("gen_traffic_like: frames must be at least 1");
  if (n_sequences < 0) throw std::invalid_argument("gen_traffic_like: negative sequence count");
  auto m = start_manifest("traffic", frames_per_seq > 1 ? Variant::kDynamic : Variant::kGeneral, image_side, seed,
                          split, 1, 5, out_dir);
  for (int s = 0; s < n_sequences; ++s) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(s));
    auto world = TrafficWorld::random(rng, rng.uniform_int(1, 5));
    ManifestItem item;
    item.id = item_id(split, s);
    item.count = static_cast<int>(world.cars.size());
    for (int f = 0; f < frames_per_seq; ++f) {
      if (f > 0) world.step(rng);
      const auto path = frame_path(item.id, f);
      write_png(out_dir / path, draw_traffic(world, image_side));
      item.frames.push_back(path);
      std::vector<Pose> centers;
      for (const auto& car : world.cars) centers.push_back(to_pose(world.center(car)));
      item.centers.push_back(std::move(centers));
    }
    m.items.push_back(std::move(item));
  }
  save_manifest(m);
  return m;
}

std::vector<std::string> dataset_names() { return {"balls_in_bowl", "stacks", "traffic"}; }

std::pair<DatasetManifest, DatasetManifest> generate_dataset(const std::string& name, std::uint64_t seed,
                                                             int n_train, int n_test, int frames_per_seq,
                                                             int image_side, const std::filesystem::path& out_dir) {
  const auto train_seed = splitmix64(seed ^ 0x7472616eULL);
  const auto test_seed = splitmix64(seed ^ 0x74657374ULL);
  auto make = [&](std::uint64_t s, int n, const std::string& split) {
    const auto dir = out_dir / split;
    if (name == "balls_in_bowl") return gen_balls_in_bowl(s, n, frames_per_seq, image_side, dir, split);
    if (name == "stacks") return gen_stacks(s, n, image_side, dir, split);
    if (name == "traffic") return gen_traffic_like(s, n, frames_per_seq, image_side, dir, split);
    throw std::invalid_argument("unknown dataset '" + name + "'");
  };
  auto train = make(train_seed, n_train, "train");
  auto test = make(test_seed, n_test, "test");
  return {std::move(train), std::move(test)};
}

// ---- Loading ---------------------------------------------------------------

std::vector<torch::Tensor> load_all_frames(const DatasetManifest& manifest) {
  std::vector<torch::Tensor> out;
  out.reserve(manifest.items.size());
  for (const auto& it : manifest.items) {
    std::vector<torch::Tensor> frames;
    for (const auto& f : it.frames) {
      Image8 img;
      try {
        img = read_png(manifest.root / f);
      } catch (const std::exception& ex) {
        throw DatasetCorrupt("cannot read frame " + (manifest.root / f).string() + ": " + ex.what());
      }
      if (img.width != manifest.image_side || img.height != manifest.image_side)
        throw DatasetCorrupt("frame " + f + " does not match the manifest image side");
      frames.push_back(to_tensor(img));
    }
    out.push_back(torch::stack(frames, 0));
  }
  return out;
}

BatchLoader::BatchLoader(const DatasetManifest& manifest, int batch_size, int clip_len, std::uint64_t seed)
    : batch_size_(batch_size), clip_len_(clip_len), seed_(seed), side_(manifest.image_side) {
  if (batch_size < 1) throw std::invalid_argument("BatchLoader: batch size must be positive");
  if (clip_len < 1) throw std::invalid_argument("BatchLoader: clip length must be positive");
  if (static_cast<std::int64_t>(manifest.items.size()) < batch_size)
    throw std::invalid_argument("BatchLoader: fewer items than one batch");
  for (const auto& frames : load_all_frames(manifest)) {
    if (frames.size(0) < clip_len) throw std::invalid_argument("BatchLoader: item shorter than the clip length");
    clips_.push_back(((frames + 1.0) * 127.5).round().to(torch::kUInt8));
  }
  plan_epoch();
}

std::int64_t BatchLoader::batches_per_epoch() const {
  return static_cast<std::int64_t>(clips_.size()) / batch_size_;
}

void BatchLoader::plan_epoch() {
  auto rng = Rng::for_stream(seed_, static_cast<std::uint64_t>(epoch_));
  order_.resize(clips_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
  shuffle(order_, rng);
  starts_.resize(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) {
    const auto frames = clips_[static_cast<std::size_t>(order_[i])].size(0);
    starts_[i] = rng.uniform_int(0, static_cast<int>(frames) - clip_len_);
  }
}

void BatchLoader::seek(std::int64_t epoch, std::int64_t position) {
  if (epoch < 0 || position < 0 || position > static_cast<std::int64_t>(clips_.size()))
    throw std::invalid_argument("BatchLoader::seek: position out of range");
  epoch_ = epoch;
  position_ = position;
  plan_epoch();
}

torch::Tensor BatchLoader::next() {
  if (position_ + batch_size_ > static_cast<std::int64_t>(clips_.size())) {
    ++epoch_;
    position_ = 0;
    plan_epoch();
  }
  std::vector<torch::Tensor> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  for (int b = 0; b < batch_size_; ++b) {
    const auto slot = static_cast<std::size_t>(position_ + b);
    const auto& clip = clips_[static_cast<std::size_t>(order_[slot])];
    batch.push_back(clip.slice(0, starts_[slot], starts_[slot] + clip_len_).reshape({3 * clip_len_, side_, side_}));
  }
  position_ += batch_size_;
  return torch::stack(batch, 0).to(torch::kFloat32) / 127.5 - 1.0;
}

}  // namespace relate
