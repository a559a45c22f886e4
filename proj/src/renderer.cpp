#include "relate/renderer.hpp"

#include <limits>
#include <stdexcept>

#include "relate/errors.hpp"
#include "relate/nn.hpp"

namespace relate {
namespace {

using torch::indexing::Slice;

torch::ScalarType module_dtype(const torch::nn::Module& m) {
  auto params = m.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

torch::nn::ConvTranspose2d same_size_conv(std::int64_t in, std::int64_t out) {
  return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 3).stride(1).padding(1));
}

/// Bilinear read of img [N, C, H, W] at cells (x0 + wx1, y0 + wy1), where
/// x0, y0 are integer-valued [N, P] and wx1, wy1 broadcast against them.
/// Reads outside the grid return zero.
torch::Tensor sample_bilinear_split(const torch::Tensor& img, const torch::Tensor& x0, const torch::Tensor& y0,
                                    const torch::Tensor& wx1, const torch::Tensor& wy1) {
  const auto N = img.size(0);
  const auto C = img.size(1);
  const auto H = img.size(2);
  const auto W = img.size(3);
  const auto P = x0.size(1);
  const auto flat = img.reshape({N, C, H * W});
  const auto wx0 = 1.0 - wx1;
  const auto wy0 = 1.0 - wy1;

  auto out = torch::zeros({N, C, P}, img.options());
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const auto xi = x0 + dx;
      const auto yi = y0 + dy;
      const auto valid = (xi >= 0) & (xi <= W - 1) & (yi >= 0) & (yi <= H - 1);
      const auto idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).to(torch::kLong);
      const auto vals = flat.gather(2, idx.unsqueeze(1).expand({N, C, P}));
      const auto w = (dy ? wy1 : wy0) * (dx ? wx1 : wx0) * valid.to(img.scalar_type());
      out = out + vals * w.unsqueeze(1);
    }
  }
  return out;
}

/// Same, at continuous cell coordinates x, y ([N, P], cell centers at integers).
torch::Tensor sample_bilinear(const torch::Tensor& img, const torch::Tensor& x, const torch::Tensor& y) {
  const auto x0 = torch::floor(x).detach();
  const auto y0 = torch::floor(y).detach();
  return sample_bilinear_split(img, x0, y0, x - x0, y - y0);
}

}  // namespace

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
  const auto mean = x.mean({2, 3}, /*keepdim=*/true);
  const auto var = (x - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
  return (x - mean) / torch::sqrt(var + eps);
}

StyleModulationImpl::StyleModulationImpl(std::int64_t code_dim, std::int64_t channels) : channels(channels) {
  map = register_module("map", torch::nn::Linear(code_dim, 2 * channels));
}

torch::Tensor StyleModulationImpl::forward(const torch::Tensor& x, const torch::Tensor& code) const {
  const auto style = torch::relu(map.ptr()->forward(code));
  const auto N = x.size(0);
  const auto scale = style.index({Slice(), Slice(0, channels)}).reshape({N, channels, 1, 1});
  const auto shift = style.index({Slice(), Slice(channels, 2 * channels)}).reshape({N, channels, 1, 1});
  return scale * instance_normalize(x) + shift;
}

AppearanceDecoderImpl::AppearanceDecoderImpl(std::int64_t code_dim, std::int64_t seed_slots,
                                             std::int64_t seed_channels, std::int64_t side,
                                             std::int64_t hidden_channels, std::int64_t out_channels)
    : code_dim(code_dim), side(side) {
  seed = register_parameter("seed", torch::zeros({seed_slots, seed_channels, side, side}));
  style_seed = register_module("style_seed", StyleModulation(code_dim, seed_channels));
  conv1 = register_module("conv1", same_size_conv(seed_channels, hidden_channels));
  style1 = register_module("style1", StyleModulation(code_dim, hidden_channels));
  conv2 = register_module("conv2", same_size_conv(hidden_channels, out_channels));
  style2 = register_module("style2", StyleModulation(code_dim, out_channels));
}

torch::Tensor AppearanceDecoderImpl::forward(const torch::Tensor& code, const torch::Tensor& slot) const {
  if (code.dim() != 2 || code.size(1) != code_dim)
    throw InvalidState("decoder code has width " + std::to_string(code.size(-1)) + ", weights expect " +
                       std::to_string(code_dim));
  auto x = seed.index_select(0, slot);
  x = style_seed->forward(x, code);
  x = style1->forward(torch::leaky_relu(conv1.ptr()->forward(x), kLeakySlope), code);
  x = style2->forward(torch::leaky_relu(conv2.ptr()->forward(x), kLeakySlope), code);
  return x;
}

ImageGeneratorImpl::ImageGeneratorImpl(const ModelConfig& cfg)
    : in_channels(cfg.channels), canvas_side(cfg.canvas_side) {
  cfg.validate();
  struct Stage {
    int kernel;
    int stride;
    std::int64_t out;
  };
  const auto& g = cfg.generator_channels;
  std::vector<Stage> stages{{4, 2, g[0]}, {4, 2, g[1]}, {3, 1, g[2]}, {4, 2, g[3]}, {3, 1, 3}};
  int upsampling = 3;
  for (int i = static_cast<int>(stages.size()) - 1; i >= 0 && upsampling > cfg.generator_upsampling_stages(); --i) {
    if (stages[static_cast<std::size_t>(i)].stride == 2) {
      stages.erase(stages.begin() + i);
      --upsampling;
    }
  }
  std::int64_t in = cfg.channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    auto opts = torch::nn::ConvTranspose2dOptions(in, s.out, s.kernel).stride(s.stride).padding(1);
    layers.push_back(register_module("conv" + std::to_string(i + 1), torch::nn::ConvTranspose2d(opts)));
    in = s.out;
  }
}

torch::Tensor ImageGeneratorImpl::forward(const torch::Tensor& w) const {
  if (w.dim() != 4 || w.size(1) != in_channels || w.size(2) != canvas_side || w.size(3) != canvas_side)
    throw InvalidState("generator input must be [N, " + std::to_string(in_channels) + ", " +
                       std::to_string(canvas_side) + ", " + std::to_string(canvas_side) + "]");
  auto x = w;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].ptr()->forward(x);
    x = i + 1 < layers.size() ? torch::leaky_relu(x, kLeakySlope) : torch::tanh(x);
  }
  return x;
}

torch::Tensor place_windows(const torch::Tensor& windows, std::int64_t canvas_side, const torch::Tensor& sides) {
  const auto h = windows.size(2);
  if (windows.dim() != 4 || windows.size(3) != h) throw std::invalid_argument("place_windows: windows must be square");
  if (h > canvas_side) throw std::invalid_argument("place_windows: window larger than canvas");
  if (!sides.defined()) {
    const auto lo = (canvas_side - h) / 2;
    const auto hi = canvas_side - h - lo;
    return torch::constant_pad_nd(windows, {lo, hi, lo, hi}, 0.0);
  }
  const auto N = windows.size(0);
  if (sides.dim() != 1 || sides.size(0) != N) throw std::invalid_argument("place_windows: need one side per window");
  if (!torch::isfinite(sides).all().item<bool>() || (sides < 1.0).any().item<bool>() ||
      (sides > static_cast<double>(canvas_side)).any().item<bool>())
    throw std::invalid_argument("place_windows: window sides must lie in [1, H]");

  const auto dtype = windows.scalar_type();
  // Offsets of output cell centers from the canvas center.
  const auto u = torch::arange(canvas_side, windows.options()) + 0.5 - 0.5 * static_cast<double>(canvas_side);
  const auto sd = sides.to(dtype).unsqueeze(1);                  // [N, 1]
  const auto src = (u.unsqueeze(0) * (static_cast<double>(h) / sd) + 0.5 * static_cast<double>(h) - 0.5)
                       .clamp(0.0, static_cast<double>(h - 1));  // [N, H]
  const auto inside = (u.abs().unsqueeze(0) <= 0.5 * sd).to(dtype);
  const auto H = canvas_side;
  const auto xs = src.unsqueeze(1).expand({N, H, H}).reshape({N, H * H});
  const auto ys = src.unsqueeze(2).expand({N, H, H}).reshape({N, H * H});
  const auto keep = (inside.unsqueeze(2) * inside.unsqueeze(1)).reshape({N, 1, H * H});
  const auto out = sample_bilinear(windows, xs, ys) * keep;
  return out.reshape({N, windows.size(1), H, H});
}

torch::Tensor translate_canvases(const torch::Tensor& canvases, const torch::Tensor& theta) {
  if (canvases.dim() != 4) throw std::invalid_argument("translate_canvases: canvases must be [N, C, H, W]");
  const auto N = canvases.size(0);
  if (theta.dim() != 2 || theta.size(0) != N || theta.size(1) != 2)
    throw std::invalid_argument("translate_canvases: theta must be [N, 2]");
  if (!torch::isfinite(theta).all().item<bool>()) throw std::invalid_argument("translate_canvases: non-finite pose");
  const auto H = canvases.size(2);
  const auto W = canvases.size(3);
  const auto cells_x = theta.select(1, 0).to(canvases.scalar_type()) * (0.5 * static_cast<double>(W));
  const auto cells_y = theta.select(1, 1).to(canvases.scalar_type()) * (0.5 * static_cast<double>(H));
  const auto cols = torch::arange(W, canvases.options()).unsqueeze(0).expand({H, W}).reshape({1, H * W});
  const auto rows = torch::arange(H, canvases.options()).unsqueeze(1).expand({H, W}).reshape({1, H * W});
  // Whole cells and the fraction are split before the grid offsets are added.
  const auto whole_x = torch::floor(cells_x).detach();
  const auto whole_y = torch::floor(cells_y).detach();
  const auto out = sample_bilinear_split(canvases, cols + whole_x.unsqueeze(1), rows + whole_y.unsqueeze(1),
                                         (cells_x - whole_x).unsqueeze(1), (cells_y - whole_y).unsqueeze(1));
  return out.reshape({N, canvases.size(1), H, W});
}

torch::Tensor pool_canvases(const torch::Tensor& canvases, const torch::Tensor& mask, Pooling pooling) {
  if (canvases.dim() != 5) throw std::invalid_argument("pool_canvases: canvases must be [N, L, C, H, W]");
  if (mask.dim() != 2 || mask.size(0) != canvases.size(0) || mask.size(1) != canvases.size(1))
    throw std::invalid_argument("pool_canvases: mask must be [N, L]");
  const auto L = canvases.size(1);
  const auto m = mask.to(canvases.scalar_type()).reshape({mask.size(0), L, 1, 1, 1});
  if (pooling == Pooling::kSum) {
    // Summed in double so the result does not depend on canvas order.
    if (canvases.scalar_type() == torch::kFloat32)
      return (canvases.to(torch::kFloat64) * m.to(torch::kFloat64)).sum(1).to(torch::kFloat32);
    return (canvases * m).sum(1);
  }

  auto out = torch::full_like(canvases.select(1, 0), -std::numeric_limits<double>::infinity());
  for (std::int64_t l = 0; l < L; ++l) {
    const auto c = canvases.select(1, l);
    const auto take = (m.select(1, l) > 0) & (c > out);
    out = torch::where(take, c, out);
  }
  const auto any_live = (m.sum(1) > 0).expand_as(out);
  return torch::where(any_live, out, torch::zeros_like(out));
}

RendererImpl::RendererImpl(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  background = register_module(
      "background", AppearanceDecoder(cfg.background_dim, 1, cfg.background_seed_channels, cfg.canvas_side,
                                      cfg.decoder_hidden_channels, cfg.channels));
  const std::int64_t slots = cfg.per_object_seeds ? cfg.foreground_seed_slots : 1;
  foreground = register_module(
      "foreground", AppearanceDecoder(cfg.foreground_dim, slots, cfg.foreground_seed_channels, cfg.window_side,
                                      cfg.decoder_hidden_channels, cfg.channels));
  generator = register_module("generator", ImageGenerator(cfg));
}

torch::Tensor RendererImpl::background_canvas(const torch::Tensor& z0) const {
  const auto slot = torch::zeros({z0.size(0)}, torch::TensorOptions().dtype(torch::kLong));
  return background->forward(z0, slot);
}

torch::Tensor RendererImpl::object_windows(const torch::Tensor& z) const {
  if (z.dim() != 3) throw InvalidState("object codes must be [B, S, N_f]");
  const auto B = z.size(0);
  const auto S = z.size(1);
  const auto h = config.window_side;
  if (B * S == 0) return torch::zeros({B, S, config.channels, h, h}, z.options());
  const auto slots = foreground->seed.size(0);
  const auto slot = (torch::arange(S, torch::TensorOptions().dtype(torch::kLong)) % slots).repeat({B});
  auto code = z.reshape({B * S, z.size(2)});
  if (config.constant_style) code = torch::ones_like(code);
  return foreground->forward(code, slot).reshape({B, S, config.channels, h, h});
}

torch::Tensor RendererImpl::object_canvases(const torch::Tensor& windows, const torch::Tensor& theta,
                                            const torch::Tensor& sides) const {
  const auto B = windows.size(0);
  const auto S = windows.size(1);
  const auto H = config.canvas_side;
  if (theta.dim() != 3 || theta.size(0) != B || theta.size(1) != S)
    throw InvalidState("poses must be [B, S, 2] matching the object codes");
  if (B * S == 0) return torch::zeros({B, S, config.channels, H, H}, windows.options());
  const auto flat = windows.reshape({B * S, config.channels, windows.size(3), windows.size(4)});
  const auto placed = place_windows(flat, H, sides.defined() ? sides.reshape({B * S}) : sides);
  return translate_canvases(placed, theta.reshape({B * S, 2})).reshape({B, S, config.channels, H, H});
}

torch::Tensor RendererImpl::compose_scene(const torch::Tensor& background_canvas, const torch::Tensor& objects,
                                          const torch::Tensor& mask, bool with_background) const {
  const auto B = background_canvas.size(0);
  const auto all = torch::cat({background_canvas.unsqueeze(1), objects}, 1);
  const auto bg_live = torch::full({B, 1}, with_background ? 1.0 : 0.0, mask.options());
  return pool_canvases(all, torch::cat({bg_live, mask}, 1), config.pooling);
}

torch::Tensor RendererImpl::forward(const torch::Tensor& z0, const torch::Tensor& z, const torch::Tensor& theta,
                                    const torch::Tensor& mask, bool with_background,
                                    const torch::Tensor& sides) const {
  const auto objects = object_canvases(object_windows(z), theta, sides);
  return generator->forward(compose_scene(background_canvas(z0), objects, mask, with_background));
}

namespace {

torch::Tensor code_tensor(const std::vector<double>& v, torch::ScalarType dtype) {
  return torch::tensor(v, torch::TensorOptions().dtype(torch::kFloat64)).to(dtype).reshape({1, -1});
}

}  // namespace

FeatureCanvas decode_background(const std::vector<double>& z0, const Renderer& renderer) {
  const auto grid = renderer->background_canvas(code_tensor(z0, module_dtype(*renderer)));
  return {grid.select(0, 0), CanvasSource::kBackground, -1};
}

FeatureCanvas decode_foreground(const std::vector<double>& z, const Renderer& renderer,
                                std::optional<double> window_side, int slot) {
  const auto& cfg = renderer->config;
  if (window_side && !(*window_side >= 1.0 && *window_side <= cfg.canvas_side))
    throw std::invalid_argument("decode_foreground: window side must lie in [1, H]");
  if (slot < 0) throw std::invalid_argument("decode_foreground: negative seed slot");
  const auto dtype = module_dtype(*renderer);
  auto code = code_tensor(z, dtype);
  if (cfg.constant_style) code = torch::ones_like(code);
  const auto index = torch::full({1}, slot % renderer->foreground->seed.size(0),
                                 torch::TensorOptions().dtype(torch::kLong));
  const auto window = renderer->foreground->forward(code, index);
  torch::Tensor sides;
  if (window_side) sides = torch::full({1}, *window_side, torch::TensorOptions().dtype(dtype));
  return {place_windows(window, cfg.canvas_side, sides).select(0, 0), CanvasSource::kObject, slot};
}

FeatureCanvas translate_canvas(const FeatureCanvas& canvas, Pose theta) {
  const auto t = torch::tensor({theta.x, theta.y}, torch::TensorOptions().dtype(torch::kFloat64))
                     .to(canvas.grid.scalar_type())
                     .reshape({1, 2});
  return {translate_canvases(canvas.grid.unsqueeze(0), t).select(0, 0), canvas.source, canvas.object};
}

FeatureCanvas compose(const std::vector<FeatureCanvas>& canvases, Pooling pooling) {
  if (canvases.empty()) throw std::invalid_argument("compose: no canvases");
  std::vector<torch::Tensor> grids;
  for (const auto& c : canvases) {
    if (c.grid.sizes() != canvases.front().grid.sizes() || c.grid.dim() != 3)
      throw std::invalid_argument("compose: canvases must share one [C, H, H] shape");
    grids.push_back(c.grid);
  }
  const auto stacked = torch::stack(grids, 0).unsqueeze(0);
  const auto mask = torch::ones({1, static_cast<std::int64_t>(grids.size())}, stacked.options());
  return {pool_canvases(stacked, mask, pooling).select(0, 0), CanvasSource::kComposed, -1};
}

torch::Tensor render(const FeatureCanvas& w, const Renderer& renderer) {
  if (w.grid.dim() != 3) throw InvalidState("render: canvas must be [C, H, H]");
  return renderer->generator->forward(w.grid.unsqueeze(0)).select(0, 0);
}

torch::Tensor render_scene(const LatentScene& scene, const Renderer& renderer, const RenderOptions& opts) {
  const int K = scene.K();
  if (opts.only_object && (*opts.only_object < 0 || *opts.only_object >= K))
    throw std::invalid_argument("render_scene: only_object out of range");
  if (!opts.visible.empty() && static_cast<int>(opts.visible.size()) != K)
    throw std::invalid_argument("render_scene: visibility list must have one entry per object");
  if (!opts.window_sides.empty() && static_cast<int>(opts.window_sides.size()) != K)
    throw std::invalid_argument("render_scene: window side list must have one entry per object");

  torch::NoGradGuard guard;
  const auto dtype = module_dtype(*renderer);
  const auto batch = to_batch({scene}, renderer->config.foreground_dim, dtype);
  const auto theta = poses_tensor({scene}, dtype);
  auto mask = batch.mask.clone();
  for (int k = 0; k < K; ++k) {
    const bool live = (opts.visible.empty() || opts.visible[static_cast<std::size_t>(k)]) &&
                      (!opts.only_object || *opts.only_object == k);
    if (!live) mask.index_put_({0, k}, 0.0);
  }
  torch::Tensor sides;
  if (!opts.window_sides.empty()) {
    sides = torch::full({1, batch.slots()}, static_cast<double>(renderer->config.window_side),
                        torch::TensorOptions().dtype(dtype));
    for (int k = 0; k < K; ++k) sides.index_put_({0, k}, opts.window_sides[static_cast<std::size_t>(k)]);
  }
  return renderer->forward(batch.z0, batch.z, theta, mask, opts.with_background, sides).select(0, 0);
}

}  // namespace relate
