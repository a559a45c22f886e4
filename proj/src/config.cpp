#include "relate/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace relate {
namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_exact(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return n;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
  return out.str();
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = static_cast<T>(std::stod(value, &used));
      if (used != value.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key + "': not a number: '" + value + "'");
    }
  } else {
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
      throw std::invalid_argument("config key '" + key + "': not an integer: '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) out.push_back(parse_number<int>(key, tok));
  return out;
}

AxisRange parse_range(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::string lo, hi, extra;
  if (!(in >> lo >> hi) || (in >> extra))
    throw std::invalid_argument("config key '" + key + "': expected 'lo hi'");
  return {parse_number<double>(key, lo), parse_number<double>(key, hi)};
}

}  // namespace

int ModelConfig::generator_upsampling_stages() const {
  if (canvas_side <= 0 || image_side % canvas_side != 0) return -1;
  const int ratio = image_side / canvas_side;
  return is_power_of_two(ratio) ? log2_exact(ratio) : -1;
}

int ModelConfig::discriminator_stride_one_layers() const {
  if (image_side % 4 != 0 || !is_power_of_two(image_side / 4)) return -1;
  return 5 - log2_exact(image_side / 4);
}

void ModelConfig::validate() const {
  require(background_dim > 0, "background_dim must be positive");
  require(foreground_dim > 0, "foreground_dim must be positive");
  require(canvas_side > 0, "canvas_side must be positive");
  require(window_side >= 1 && window_side < canvas_side, "window_side must satisfy 1 <= H' < H");
  require((canvas_side - window_side) % 2 == 0, "canvas_side - window_side must be even (centered window)");
  require(channels > 0, "channels must be positive");
  require(k_min >= 1, "k_min must be at least 1");
  require(k_min <= k_max, "k_min must not exceed k_max");
  for (const auto* r : {&pose_x, &pose_y}) {
    require(r->lo <= r->hi, "pose range lo must not exceed hi");
    require(r->lo >= -1.0 && r->hi <= 1.0, "pose range must lie within [-1, 1]");
  }
  const int up = generator_upsampling_stages();
  require(up >= 1 && up <= 3, "image_side / canvas_side must be 2, 4 or 8");
  const int s1 = discriminator_stride_one_layers();
  require(s1 >= 0 && s1 <= 4, "image_side must be 4 * 2^n with 1 <= n <= 5");
  require(generator_channels.size() == 4, "generator_channels needs 4 entries");
  require(discriminator_channels.size() == 5, "discriminator_channels needs 5 entries");
  for (int c : generator_channels) require(c > 0, "generator_channels must be positive");
  for (int c : discriminator_channels) require(c > 0, "discriminator_channels must be positive");
  require(background_seed_channels > 0 && foreground_seed_channels > 0 && decoder_hidden_channels > 0,
          "decoder widths must be positive");
  require(foreground_seed_slots >= 1, "foreground_seed_slots must be at least 1");
  require(clip_length >= 1, "clip_length must be at least 1");
  require(variant == Variant::kDynamic || clip_length == 1, "static variants use clip_length 1");
  require(!(variant == Variant::kOrdered && correction == CorrectionMode::kAbsolute),
          "the ordered variant has no absolute-correction ablation");
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  require(generator_steps >= 1, "generator_steps (M) must be at least 1");
  require(epochs >= 1, "epochs must be at least 1");
  require(iterations_per_epoch >= 0, "iterations_per_epoch must be >= 0");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

Preset preset(std::string_view name) {
  Preset p;
  ModelConfig& m = p.model;
  TrainConfig& t = p.train;
  m.canvas_side = 16;
  m.image_side = 128;
  m.channels = 256;
  m.pooling = Pooling::kMax;
  t.adam_beta1 = 0.0;
  t.adam_beta2 = 0.999;

  auto row = [&](double lr, int epochs, int M, int kmin, int kmax, int hp, int nb, int nf, AxisRange rx,
                 AxisRange ry) {
    t.learning_rate = lr;
    t.epochs = epochs;
    t.generator_steps = M;
    m.k_min = kmin;
    m.k_max = kmax;
    m.window_side = hp;
    m.background_dim = nb;
    m.foreground_dim = nf;
    m.pose_x = rx;
    m.pose_y = ry;
  };
  const AxisRange r6{-0.6, 0.6};
  const AxisRange r8{-0.8, 0.8};
  const AxisRange up6{0.0, 0.6};

  if (name == "balls_in_bowl") {
    row(0.001, 60, 1, 2, 2, 8, 3, 1, r8, r8);
    m.pooling = Pooling::kSum;
    m.per_object_seeds = true;
    m.foreground_seed_slots = 2;
    m.constant_style = true;
    t.adam_beta1 = 0.5;
    t.iterations_per_epoch = 10000;
  } else if (name == "clevr5") {
    row(0.0001, 40, 2, 2, 5, 4, 1, 90, r6, r6);
  } else if (name == "clevr5_vbg") {
    row(0.0001, 30, 2, 2, 5, 4, 1, 90, r6, r6);
  } else if (name == "clevr") {
    row(0.0001, 40, 2, 3, 6, 4, 1, 90, r6, r6);
  } else if (name == "shapestacks") {
    row(0.001, 30, 2, 2, 5, 4, 12, 64, r6, up6);
    m.variant = Variant::kOrdered;
  } else if (name == "real_traffic") {
    row(0.0001, 20, 2, 1, 5, 6, 1, 20, r6, r6);
  } else if (name == "clevr3_scale") {
    row(0.0001, 40, 2, 2, 3, 6, 1, 20, r6, r6);
    m.scale_enabled = true;
  } else if (name == "clevr5_scale" || name == "clevr5_vbg_scale") {
    row(0.0001, 40, 2, 2, 5, 4, 1, 20, r6, r6);
    m.scale_enabled = true;
  } else if (name == "clevr_scale") {
    row(0.0001, 40, 2, 3, 6, 6, 1, 20, r6, r6);
    m.scale_enabled = true;
  } else if (name == "shapestacks_scale") {
    row(0.001, 30, 2, 2, 5, 4, 5, 20, r6, up6);
    m.variant = Variant::kOrdered;
    m.scale_enabled = true;
  } else if (name == "real_traffic_scale") {
    row(0.0001, 20, 2, 1, 5, 6, 1, 20, r6, r6);
    m.scale_enabled = true;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
  return p;
}

std::vector<std::string> preset_names() {
  return {"balls_in_bowl",   "clevr5",       "clevr5_vbg",        "clevr",
          "shapestacks",     "real_traffic", "clevr3_scale",      "clevr5_scale",
          "clevr5_vbg_scale", "clevr_scale", "shapestacks_scale", "real_traffic_scale"};
}

ModelConfig desk_scale(ModelConfig cfg) {
  cfg.image_side = cfg.canvas_side * 4;
  return cfg;
}

ModelConfig toy_scale(ModelConfig cfg) {
  const int old_side = cfg.canvas_side;
  cfg.canvas_side = 8;
  cfg.window_side = std::max(2, cfg.window_side * cfg.canvas_side / old_side);
  if ((cfg.canvas_side - cfg.window_side) % 2 != 0) ++cfg.window_side;
  cfg.image_side = 32;
  cfg.channels = 32;
  cfg.background_seed_channels = 32;
  cfg.foreground_seed_channels = 32;
  cfg.decoder_hidden_channels = 32;
  cfg.generator_channels = {32, 16, 16, 16};
  cfg.discriminator_channels = {16, 32, 64, 64, 128};
  return cfg;
}

Preset dynamic_variant(Preset p, int clip_length) {
  p.model.variant = Variant::kDynamic;
  p.model.clip_length = clip_length;
  p.train.learning_rate = 0.0001;
  p.train.adam_beta1 = 0.0;
  return p;
}

std::string to_string(Pooling p) { return p == Pooling::kMax ? "max" : "sum"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kGeneral: return "general";
    case Variant::kOrdered: return "ordered";
    case Variant::kDynamic: return "dynamic";
  }
  return "general";
}

std::string to_string(CorrectionMode m) {
  switch (m) {
    case CorrectionMode::kResidual: return "residual";
    case CorrectionMode::kIdentity: return "identity";
    case CorrectionMode::kAbsolute: return "absolute";
  }
  return "residual";
}

std::string to_string(GeneratorLoss g) {
  return g == GeneratorLoss::kSaturating ? "saturating" : "non_saturating";
}

Pooling parse_pooling(std::string_view s) {
  if (s == "max") return Pooling::kMax;
  if (s == "sum") return Pooling::kSum;
  throw std::invalid_argument("unknown pooling '" + std::string(s) + "'");
}

Variant parse_variant(std::string_view s) {
  if (s == "general") return Variant::kGeneral;
  if (s == "ordered") return Variant::kOrdered;
  if (s == "dynamic") return Variant::kDynamic;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

CorrectionMode parse_correction(std::string_view s) {
  if (s == "residual") return CorrectionMode::kResidual;
  if (s == "identity") return CorrectionMode::kIdentity;
  if (s == "absolute") return CorrectionMode::kAbsolute;
  throw std::invalid_argument("unknown correction mode '" + std::string(s) + "'");
}

GeneratorLoss parse_generator_loss(std::string_view s) {
  if (s == "saturating") return GeneratorLoss::kSaturating;
  if (s == "non_saturating") return GeneratorLoss::kNonSaturating;
  throw std::invalid_argument("unknown generator loss '" + std::string(s) + "'");
}

namespace {

void write_model(std::ostream& out, const ModelConfig& m) {
  out << "model.background_dim = " << m.background_dim << '\n'
      << "model.foreground_dim = " << m.foreground_dim << '\n'
      << "model.canvas_side = " << m.canvas_side << '\n'
      << "model.window_side = " << m.window_side << '\n'
      << "model.channels = " << m.channels << '\n'
      << "model.k_min = " << m.k_min << '\n'
      << "model.k_max = " << m.k_max << '\n'
      << "model.pose_x = " << fmt_double(m.pose_x.lo) << ' ' << fmt_double(m.pose_x.hi) << '\n'
      << "model.pose_y = " << fmt_double(m.pose_y.lo) << ' ' << fmt_double(m.pose_y.hi) << '\n'
      << "model.image_side = " << m.image_side << '\n'
      << "model.pooling = " << to_string(m.pooling) << '\n'
      << "model.variant = " << to_string(m.variant) << '\n'
      << "model.scale_enabled = " << (m.scale_enabled ? "true" : "false") << '\n'
      << "model.correction = " << to_string(m.correction) << '\n'
      << "model.background_seed_channels = " << m.background_seed_channels << '\n'
      << "model.foreground_seed_channels = " << m.foreground_seed_channels << '\n'
      << "model.decoder_hidden_channels = " << m.decoder_hidden_channels << '\n'
      << "model.generator_channels = " << join_ints(m.generator_channels) << '\n'
      << "model.discriminator_channels = " << join_ints(m.discriminator_channels) << '\n'
      << "model.per_object_seeds = " << (m.per_object_seeds ? "true" : "false") << '\n'
      << "model.foreground_seed_slots = " << m.foreground_seed_slots << '\n'
      << "model.constant_style = " << (m.constant_style ? "true" : "false") << '\n'
      << "model.clip_length = " << m.clip_length << '\n';
}

void write_train(std::ostream& out, const TrainConfig& t) {
  out << "train.learning_rate = " << fmt_double(t.learning_rate) << '\n'
      << "train.adam_beta1 = " << fmt_double(t.adam_beta1) << '\n'
      << "train.adam_beta2 = " << fmt_double(t.adam_beta2) << '\n'
      << "train.generator_steps = " << t.generator_steps << '\n'
      << "train.epochs = " << t.epochs << '\n'
      << "train.iterations_per_epoch = " << t.iterations_per_epoch << '\n'
      << "train.max_steps = " << t.max_steps << '\n'
      << "train.batch_size = " << t.batch_size << '\n'
      << "train.seed = " << t.seed << '\n'
      << "train.generator_loss = " << to_string(t.generator_loss) << '\n'
      << "train.position_regularizer = " << (t.position_regularizer ? "true" : "false") << '\n'
      << "train.style_loss = " << (t.style_loss ? "true" : "false") << '\n'
      << "train.checkpoint_every = " << t.checkpoint_every << '\n';
}

}  // namespace

std::string to_config_text(const ModelConfig& model) {
  std::ostringstream out;
  out << "# relate model configuration\n";
  write_model(out, model);
  return out.str();
}

std::string to_config_text(const ModelConfig& model, const TrainConfig& train) {
  std::ostringstream out;
  out << "# relate model + training configuration\n";
  write_model(out, model);
  write_train(out, train);
  return out.str();
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
    if (end == text.size()) break;
  }
  return kv;
}

ModelConfig model_config_from(const KeyValues& kv, ModelConfig m) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("model.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (k == "background_dim") m.background_dim = parse_number<int>(key, value);
    else if (k == "foreground_dim") m.foreground_dim = parse_number<int>(key, value);
    else if (k == "canvas_side") m.canvas_side = parse_number<int>(key, value);
    else if (k == "window_side") m.window_side = parse_number<int>(key, value);
    else if (k == "channels") m.channels = parse_number<int>(key, value);
    else if (k == "k_min") m.k_min = parse_number<int>(key, value);
    else if (k == "k_max") m.k_max = parse_number<int>(key, value);
    else if (k == "pose_x") m.pose_x = parse_range(key, value);
    else if (k == "pose_y") m.pose_y = parse_range(key, value);
    else if (k == "image_side") m.image_side = parse_number<int>(key, value);
    else if (k == "pooling") m.pooling = parse_pooling(value);
    else if (k == "variant") m.variant = parse_variant(value);
    else if (k == "scale_enabled") m.scale_enabled = parse_bool(key, value);
    else if (k == "correction") m.correction = parse_correction(value);
    else if (k == "background_seed_channels") m.background_seed_channels = parse_number<int>(key, value);
    else if (k == "foreground_seed_channels") m.foreground_seed_channels = parse_number<int>(key, value);
    else if (k == "decoder_hidden_channels") m.decoder_hidden_channels = parse_number<int>(key, value);
    else if (k == "generator_channels") m.generator_channels = parse_int_list(key, value);
    else if (k == "discriminator_channels") m.discriminator_channels = parse_int_list(key, value);
    else if (k == "per_object_seeds") m.per_object_seeds = parse_bool(key, value);
    else if (k == "foreground_seed_slots") m.foreground_seed_slots = parse_number<int>(key, value);
    else if (k == "constant_style") m.constant_style = parse_bool(key, value);
    else if (k == "clip_length") m.clip_length = parse_number<int>(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  return m;
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig t) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("train.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (k == "learning_rate") t.learning_rate = parse_number<double>(key, value);
    else if (k == "adam_beta1") t.adam_beta1 = parse_number<double>(key, value);
    else if (k == "adam_beta2") t.adam_beta2 = parse_number<double>(key, value);
    else if (k == "generator_steps") t.generator_steps = parse_number<int>(key, value);
    else if (k == "epochs") t.epochs = parse_number<int>(key, value);
    else if (k == "iterations_per_epoch") t.iterations_per_epoch = parse_number<std::int64_t>(key, value);
    else if (k == "max_steps") t.max_steps = parse_number<std::int64_t>(key, value);
    else if (k == "batch_size") t.batch_size = parse_number<int>(key, value);
    else if (k == "seed") t.seed = parse_number<std::uint64_t>(key, value);
    else if (k == "generator_loss") t.generator_loss = parse_generator_loss(value);
    else if (k == "position_regularizer") t.position_regularizer = parse_bool(key, value);
    else if (k == "style_loss") t.style_loss = parse_bool(key, value);
    else if (k == "checkpoint_every") t.checkpoint_every = parse_number<std::int64_t>(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  return t;
}

}  // namespace relate
