#include "relate/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "relate/errors.hpp"
#include "relate/losses.hpp"
#include "relate/nn.hpp"

namespace relate {
namespace {

constexpr std::uint64_t kSamplingStream = 1;
constexpr std::uint64_t kDataStream = 2;

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, const TrainConfig& t) {
  auto opts = torch::optim::AdamOptions(t.learning_rate).betas({t.adam_beta1, t.adam_beta2}).eps(1e-8);
  return std::make_unique<torch::optim::Adam>(params, opts);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

/// Uniformly chosen live object per scene.
torch::Tensor pick_objects(const SceneBatch& batch, Rng& rng) {
  const auto counts = batch.mask.sum(1).to(torch::kLong).contiguous();
  std::vector<std::int64_t> index(static_cast<std::size_t>(batch.batch()));
  for (std::int64_t b = 0; b < batch.batch(); ++b) {
    const auto k = counts[b].item<std::int64_t>();
    index[static_cast<std::size_t>(b)] = rng.uniform_int(0, static_cast<int>(std::max<std::int64_t>(k, 1)) - 1);
  }
  return torch::tensor(index, torch::kLong);
}

bool finite(const torch::Tensor& t) { return std::isfinite(t.item<double>()); }

[[noreturn]] void diverged(TrainState& state, const std::string& what) {
  std::filesystem::create_directories(state.diagnostics_dir);
  const auto path = state.diagnostics_dir / ("diverged_step_" + std::to_string(state.step) + ".ckpt");
  save_checkpoint(to_checkpoint(state), path);
  throw TrainingDiverged("non-finite " + what + " at step " + std::to_string(state.step) + "; snapshot written to " +
                             path.string(),
                         path.string());
}

void export_adam(const torch::optim::Adam& opt, const std::vector<torch::Tensor>& params, const std::string& prefix,
                 ModelCheckpoint& ckpt, nlohmann::json& steps) {
  steps = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto it = opt.state().find(params[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) {
      steps.push_back(0);
      continue;
    }
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    steps.push_back(s.step());
    ckpt.tensors.emplace_back(prefix + std::to_string(i) + "/exp_avg", s.exp_avg());
    ckpt.tensors.emplace_back(prefix + std::to_string(i) + "/exp_avg_sq", s.exp_avg_sq());
  }
}

void import_adam(torch::optim::Adam& opt, const std::vector<torch::Tensor>& params, const std::string& prefix,
                 const ModelCheckpoint& ckpt, const nlohmann::json& steps) {
  if (!steps.is_array() || steps.size() != params.size())
    throw CorruptCheckpoint("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto step = steps[i].get<std::int64_t>();
    if (step == 0) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step);
    s->exp_avg(ckpt.tensor(prefix + std::to_string(i) + "/exp_avg").to(params[i].dtype()).clone());
    s->exp_avg_sq(ckpt.tensor(prefix + std::to_string(i) + "/exp_avg_sq").to(params[i].dtype()).clone());
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

TrainState build_state(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  TrainState s;
  s.model = model;
  s.train = train;
  s.generator = GeneratorModel(model);
  s.discriminator = Discriminator(model);
  s.generator_opt = make_adam(s.generator->parameters(), train);
  s.discriminator_opt = make_adam(s.discriminator->parameters(), train);
  s.rng = Rng::for_stream(train.seed, kSamplingStream);
  return s;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void init_weights(TrainState& state, std::uint64_t seed) {
  Rng rng(seed);
  init_weights(*state.generator, rng);
  init_weights(*state.discriminator, rng);
}

TrainState make_state(const ModelConfig& model, const TrainConfig& train) {
  auto s = build_state(model, train);
  init_weights(s, train.seed);
  return s;
}

StepMetrics train_step(TrainState& state, const torch::Tensor& real) {
  const auto start = std::chrono::steady_clock::now();
  const auto& mc = state.model;
  const auto& tc = state.train;
  if (real.dim() != 4 || real.size(1) != mc.discriminator_input_channels() || real.size(2) != mc.image_side ||
      real.size(3) != mc.image_side)
    throw std::invalid_argument("train_step: real batch has the wrong shape for this model");
  const int B = static_cast<int>(real.size(0));
  auto& G = state.generator;
  auto& D = state.discriminator;
  G->train();
  D->train();
  StepMetrics m;

  // Discriminator update: real/fake, style statistics and the position head.
  {
    set_requires_grad(*D, true);
    state.discriminator_opt->zero_grad();
    const auto batch = sample_scene_batch(state.rng, mc, B);
    torch::Tensor fake;
    GeneratorModelImpl::SoloRender solo;
    const auto index = pick_objects(batch, state.rng);
    {
      torch::NoGradGuard guard;
      fake = G->forward(batch);
      if (tc.position_regularizer) solo = G->render_solo(batch, index);
    }
    const auto out_real = D->forward(real);
    const auto out_fake = D->forward(fake);
    auto total = loss_gan(out_real.prob, out_fake.prob, tc.generator_loss).discriminator;
    m.d_loss = total.item<double>();
    if (tc.style_loss) {
      const auto style = loss_style(out_real.style_probs, out_fake.style_probs, tc.generator_loss).discriminator;
      m.style_loss = style.item<double>();
      total = total + style;
    }
    if (tc.position_regularizer) {
      const auto pos = loss_position(solo.target, D->forward(solo.image).pose);
      m.pos_loss = pos.item<double>();
      total = total + pos;
    }
    if (!finite(total)) diverged(state, "discriminator loss");
    total.backward();
    state.discriminator_opt->step();
    ++state.discriminator_updates;
  }

  // M generator updates: fool D and the style heads, and make objects
  // locatable by P from their solo renders.
  set_requires_grad(*D, false);
  for (int g = 0; g < tc.generator_steps; ++g) {
    state.generator_opt->zero_grad();
    const auto batch = sample_scene_batch(state.rng, mc, B);
    const auto index = pick_objects(batch, state.rng);
    const auto out_fake = D->forward(G->forward(batch));
    auto total = generator_gan_loss(out_fake.prob, tc.generator_loss);
    m.g_loss = total.item<double>();
    if (tc.style_loss) total = total + generator_style_loss(out_fake.style_probs, tc.generator_loss);
    if (tc.position_regularizer) {
      const auto solo = G->render_solo(batch, index);
      const auto pos = loss_position(solo.target, D->forward(solo.image).pose);
      m.pos_loss = pos.item<double>();
      total = total + pos;
    }
    if (!finite(total)) {
      set_requires_grad(*D, true);
      diverged(state, "generator loss");
    }
    total.backward();
    state.generator_opt->step();
    ++state.generator_updates;
  }
  set_requires_grad(*D, true);

  ++state.step;
  m.step = state.step;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

ModelCheckpoint to_checkpoint(const TrainState& state) {
  ModelCheckpoint ckpt;
  ckpt.model = state.model;
  ckpt.train = state.train;
  for (auto& e : named_state(*state.generator, "generator/")) ckpt.tensors.push_back(std::move(e));
  for (auto& e : named_state(*state.discriminator, "discriminator/")) ckpt.tensors.push_back(std::move(e));
  nlohmann::json g_steps;
  nlohmann::json d_steps;
  export_adam(*state.generator_opt, state.generator->parameters(), "optim/generator/", ckpt, g_steps);
  export_adam(*state.discriminator_opt, state.discriminator->parameters(), "optim/discriminator/", ckpt, d_steps);
  ckpt.metadata = state.info;
  ckpt.metadata["step"] = state.step;
  ckpt.metadata["discriminator_updates"] = state.discriminator_updates;
  ckpt.metadata["generator_updates"] = state.generator_updates;
  ckpt.metadata["data_epoch"] = state.data_epoch;
  ckpt.metadata["data_position"] = state.data_position;
  ckpt.metadata["rng"] = state.rng.serialize();
  ckpt.metadata["optimizer_steps"] = {{"generator", g_steps}, {"discriminator", d_steps}};
  return ckpt;
}

TrainState from_checkpoint(const ModelCheckpoint& ckpt) {
  auto s = build_state(ckpt.model, ckpt.train);
  load_state(*s.generator, ckpt, "generator/");
  load_state(*s.discriminator, ckpt, "discriminator/");
  try {
    const auto& meta = ckpt.metadata;
    import_adam(*s.generator_opt, s.generator->parameters(), "optim/generator/", ckpt,
                meta.at("optimizer_steps").at("generator"));
    import_adam(*s.discriminator_opt, s.discriminator->parameters(), "optim/discriminator/", ckpt,
                meta.at("optimizer_steps").at("discriminator"));
    s.step = meta.at("step").get<std::int64_t>();
    s.discriminator_updates = meta.at("discriminator_updates").get<std::int64_t>();
    s.generator_updates = meta.at("generator_updates").get<std::int64_t>();
    s.data_epoch = meta.at("data_epoch").get<std::int64_t>();
    s.data_position = meta.at("data_position").get<std::int64_t>();
    s.rng = Rng::deserialize(meta.at("rng").get<std::string>());
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const std::exception& ex) {
    throw CorruptCheckpoint(std::string("training metadata unreadable: ") + ex.what());
  }
  s.info = nlohmann::json::object();
  for (const auto& key : {"created_at", "created_by"})
    if (ckpt.metadata.contains(key)) s.info[key] = ckpt.metadata[key];
  return s;
}

GeneratorModel generator_from_checkpoint(const ModelCheckpoint& ckpt) {
  GeneratorModel g(ckpt.model);
  load_state(*g, ckpt, "generator/");
  g->eval();
  return g;
}

std::int64_t planned_steps(const DatasetManifest& data, const TrainConfig& train) {
  const std::int64_t per_epoch = train.iterations_per_epoch > 0
                                     ? train.iterations_per_epoch
                                     : static_cast<std::int64_t>(data.items.size()) / train.batch_size;
  std::int64_t total = per_epoch * train.epochs;
  if (train.max_steps > 0) total = std::min(total, train.max_steps);
  return total;
}

ModelCheckpoint train(const DatasetManifest& data, const ModelConfig& model, const TrainConfig& train,
                      const TrainOptions& options) {
  model.validate();
  train.validate();
  if (data.image_side != model.image_side)
    throw std::invalid_argument("dataset images are " + std::to_string(data.image_side) + " px but the model renders " +
                                std::to_string(model.image_side) + " px");
  if (data.variant != model.variant)
    throw std::invalid_argument("dataset variant '" + to_string(data.variant) + "' does not match model variant '" +
                                to_string(model.variant) + "'");
  if (model.variant == Variant::kDynamic && data.frames_per_item() < model.clip_length)
    throw std::invalid_argument("dataset sequences are shorter than the clip length");
  if (options.out_dir.empty()) throw std::invalid_argument("train: output directory required");
  std::filesystem::create_directories(options.out_dir);

  auto state = options.resume ? from_checkpoint(*options.resume) : make_state(model, train);
  if (options.resume && (state.model != model))
    throw std::invalid_argument("resume checkpoint was trained with a different model configuration");
  if (!state.info.contains("created_at")) state.info["created_at"] = utc_now();
  state.info["created_by"] = "relate train";
  state.diagnostics_dir = options.out_dir;

  BatchLoader loader(data, train.batch_size, model.clip_length, splitmix64(train.seed ^ kDataStream));
  loader.seek(state.data_epoch, state.data_position);
  const auto total = planned_steps(data, train);

  const auto metrics_path = options.out_dir / "metrics.csv";
  const bool fresh = !std::filesystem::exists(metrics_path) || !options.resume;
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) metrics << "step,d_loss,g_loss,style_loss,pos_loss,wall_time\n";
  const auto t0 = std::chrono::steady_clock::now();

  while (state.step < total) {
    auto m = train_step(state, loader.next());
    state.data_epoch = loader.epoch();
    state.data_position = loader.position();
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << m.step << ',' << m.d_loss << ',' << m.g_loss << ',' << m.style_loss << ',' << m.pos_loss << ','
            << m.wall_time << '\n';
    if (options.on_step) options.on_step(m);
    if (train.checkpoint_every > 0 && state.step % train.checkpoint_every == 0 && state.step < total)
      save_checkpoint(to_checkpoint(state), options.out_dir / ("checkpoint_" + std::to_string(state.step) + ".ckpt"));
  }
  metrics.flush();
  auto ckpt = to_checkpoint(state);
  save_checkpoint(ckpt, options.out_dir / "final.ckpt");
  return ckpt;
}

}  // namespace relate
