#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "relate/checkpoint.hpp"
#include "relate/data.hpp"
#include "relate/editing.hpp"
#include "relate/eval.hpp"
#include "relate/image_io.hpp"
#include "relate/interaction.hpp"
#include "relate/service.hpp"
#include "relate/trainer.hpp"

namespace relate::cli {
namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string numbered(const std::string& stem, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03d.png", i);
  return stem + buf;
}

/// A dataset argument may name a split directory or a root holding `split`/.
DatasetManifest manifest_at(const std::filesystem::path& path, const std::string& split) {
  if (std::filesystem::is_directory(path) && !std::filesystem::exists(path / "manifest.json") &&
      std::filesystem::exists(path / split / "manifest.json"))
    return load_manifest(path / split);
  return load_manifest(path);
}

GeneratorModel load_generator(const std::filesystem::path& ckpt) { return generator_from_checkpoint(load_checkpoint(ckpt)); }

std::optional<int> optional_k(int k) { return k > 0 ? std::optional<int>(k) : std::nullopt; }

void print_step(const StepMetrics& m, std::int64_t every) {
  if (every > 0 && m.step % every == 0)
    std::cout << "step " << m.step << "  d " << m.d_loss << "  g " << m.g_loss << "  style " << m.style_loss
              << "  pos " << m.pos_loss << "  " << m.wall_time << " s" << std::endl;
}

int do_train(const Preset& run, const std::filesystem::path& data, const std::filesystem::path& out,
             const std::string& resume, std::int64_t log_every) {
  const auto manifest = manifest_at(data, "train");
  TrainOptions opts;
  opts.out_dir = out;
  if (!resume.empty()) opts.resume = load_checkpoint(resume);
  opts.on_step = [log_every](const StepMetrics& m) { print_step(m, log_every); };
  std::filesystem::create_directories(out);
  write_text(out / "config.txt", to_config_text(run.model, run.train));
  const auto ckpt = train(manifest, run.model, run.train, opts);
  std::cout << "trained " << ckpt.metadata.at("step").get<std::int64_t>() << " steps; checkpoint "
            << (out / "final.ckpt").string() << std::endl;
  return 0;
}

}  // namespace

Preset run_config_from_text(const std::string& text) {
  auto kv = parse_key_values(text);
  Preset run;
  if (auto it = kv.find("preset"); it != kv.end()) run = preset(it->second);
  if (auto it = kv.find("scale"); it != kv.end()) {
    if (it->second == "desk") run.model = desk_scale(run.model);
    else if (it->second == "toy") run.model = toy_scale(run.model);
    else if (it->second != "full") throw std::invalid_argument("scale must be full, desk or toy");
  }
  if (auto it = kv.find("clip_length"); it != kv.end()) run = dynamic_variant(run, std::stoi(it->second));
  for (const auto& [key, value] : kv) {
    const bool known = key == "preset" || key == "scale" || key == "clip_length" || key.rfind("model.", 0) == 0 ||
                       key.rfind("train.", 0) == 0;
    if (!known) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  run.model = model_config_from(kv, run.model);
  run.train = train_config_from(kv, run.train);
  run.model.validate();
  run.train.validate();
  return run;
}

Preset read_run_config(const std::filesystem::path& path) { return run_config_from_text(slurp(path)); }

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  torch::set_num_threads(1);
  CLI::App app{"Object-centric scene generator: data, training, sampling, editing and evaluation"};
  app.name("relate");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // datagen
  std::string dataset;
  std::uint64_t seed = 0;
  std::string out;
  int n_train = 1000, n_test = 200, frames = 1, side = 64;
  auto* datagen = app.add_subcommand("datagen", "Generate a procedural dataset (train and test splits)");
  datagen->add_option("dataset", dataset, "balls_in_bowl, stacks or traffic")->required();
  datagen->add_option("--seed", seed, "Generation seed");
  datagen->add_option("--out", out, "Output directory")->required();
  datagen->add_option("--n-train", n_train, "Training items")->check(CLI::NonNegativeNumber);
  datagen->add_option("--n-test", n_test, "Test items")->check(CLI::NonNegativeNumber);
  datagen->add_option("--frames", frames, "Frames per sequence (1 = static)")->check(CLI::PositiveNumber);
  datagen->add_option("--side", side, "Image side in pixels")->check(CLI::PositiveNumber);

  // train / ablate
  std::string config, data, resume;
  std::int64_t log_every = 100;
  std::int64_t max_steps = -1;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Dataset directory")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Overrides train.seed");
  train_cmd->add_option("--max-steps", max_steps, "Overrides train.max_steps");
  train_cmd->add_option("--log-every", log_every, "Print losses every N steps (0 = quiet)");

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "Train an ablated model");
  ablate->add_option("--mode", mode, "no-gamma, no-residual or no-posreg")
      ->required()
      ->check(CLI::IsMember({"no-gamma", "no-residual", "no-posreg"}));
  ablate->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--data", data, "Dataset directory")->required();
  ablate->add_option("--out", out, "Output directory")->required();
  ablate->add_option("--seed", seed, "Overrides train.seed");
  ablate->add_option("--max-steps", max_steps, "Overrides train.max_steps");
  ablate->add_option("--log-every", log_every, "Print losses every N steps (0 = quiet)");

  // sample / components / rollout
  std::string ckpt, out_dir;
  int n = 8, k = 0, n_frames = 30;
  auto* sample = app.add_subcommand("sample", "Render random scenes");
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n, "Number of scenes")->check(CLI::PositiveNumber);
  sample->add_option("--k", k, "Objects per scene (default: sampled)")->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "Sampling seed");
  sample->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* components = app.add_subcommand("components", "Render background, each object and the composite");
  components->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  components->add_option("--k", k, "Objects (default: sampled)")->check(CLI::PositiveNumber);
  components->add_option("--seed", seed, "Sampling seed");
  components->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* rollout_cmd = app.add_subcommand("rollout", "Roll a dynamic model forward");
  rollout_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rollout_cmd->add_option("--frames", n_frames, "Frames")->check(CLI::PositiveNumber);
  rollout_cmd->add_option("--k", k, "Objects (default: sampled)")->check(CLI::PositiveNumber);
  rollout_cmd->add_option("--seed", seed, "Sampling seed");
  rollout_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  // eval
  std::string metric, report;
  std::int64_t n_eval = 0;
  std::uint64_t embedder_seed = 0;
  int clip_len = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("metric", metric, "fid, fvd or disentangle")->required()->check(CLI::IsMember({"fid", "fvd", "disentangle"}));
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Test dataset directory (fid, fvd)");
  eval->add_option("--n", n_eval, "Samples, videos or scenes");
  eval->add_option("--k", k, "Objects per scene (disentangle; default K_max)")->check(CLI::PositiveNumber);
  eval->add_option("--clip-len", clip_len, "Frames per clip (fvd; default: model clip length)");
  eval->add_option("--seed", seed, "Sampling seed");
  eval->add_option("--embedder-seed", embedder_seed, "Embedder seed");
  eval->add_option("--out", report, "Report file (default: stdout)");

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the inference and editing API");
  serve->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (datagen->parsed()) {
      const auto [tr, te] = generate_dataset(dataset, seed, n_train, n_test, frames, side, out);
      std::cout << "wrote " << tr.items.size() << " train and " << te.items.size() << " test items to " << out
                << std::endl;
      return 0;
    }
    if (train_cmd->parsed() || ablate->parsed()) {
      auto run_cfg = read_run_config(config);
      if ((train_cmd->parsed() ? train_cmd : ablate)->count("--seed") > 0) run_cfg.train.seed = seed;
      if (max_steps >= 0) run_cfg.train.max_steps = max_steps;
      if (mode == "no-gamma") {
        run_cfg.model.correction = CorrectionMode::kIdentity;
        run_cfg.train.position_regularizer = false;
      } else if (mode == "no-residual") {
        run_cfg.model.correction = CorrectionMode::kAbsolute;
      } else if (mode == "no-posreg") {
        run_cfg.train.position_regularizer = false;
      }
      return do_train(run_cfg, data, out, resume, log_every);
    }
    if (sample->parsed()) {
      const auto model = load_generator(ckpt);
      std::filesystem::create_directories(out_dir);
      nlohmann::json states = nlohmann::json::array();
      int i = 0;
      for (const auto& s : sample_edit_states(model, n, optional_k(k), seed)) {
        write_png(std::filesystem::path(out_dir) / numbered("sample", i++), to_image8(render_edit_state(model, s)));
        states.push_back(to_json(s));
      }
      write_text(std::filesystem::path(out_dir) / "samples.json", states.dump(2));
      std::cout << "wrote " << n << " samples to " << out_dir << std::endl;
      return 0;
    }
    if (components->parsed()) {
      const auto model = load_generator(ckpt);
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      const auto s = new_edit_state(model, seed, optional_k(k));
      const auto sides = effective_window_sides(model, s);
      RenderOptions bg;
      bg.visible.assign(static_cast<std::size_t>(s.K()), false);
      bg.window_sides = sides;
      write_png(dir / "background.png", to_image8(render_scene(s.scene, model->renderer, bg)));
      for (int i = 0; i < s.K(); ++i) {
        RenderOptions one;
        one.only_object = i;
        one.with_background = false;
        one.window_sides = sides;
        write_png(dir / numbered("object", i), to_image8(render_scene(s.scene, model->renderer, one)));
      }
      write_png(dir / "composite.png", to_image8(render_edit_state(model, s)));
      write_text(dir / "scene.json", to_json(s).dump(2));
      std::cout << "wrote " << s.K() + 2 << " images to " << out_dir << std::endl;
      return 0;
    }
    if (rollout_cmd->parsed()) {
      const auto model = load_generator(ckpt);
      if (!model->dynamics) throw std::invalid_argument("rollout needs a dynamic checkpoint");
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      const auto s = new_edit_state(model, seed, optional_k(k));
      const auto poses = rollout(s.scene, model->dynamics, n_frames);
      nlohmann::json tracks = nlohmann::json::array();
      for (std::size_t t = 0; t < poses.size(); ++t) {
        auto at = s;
        nlohmann::json frame = nlohmann::json::array();
        for (std::size_t i = 0; i < poses[t].size(); ++i) {
          at.scene.objects[i].theta = poses[t][i];
          frame.push_back(to_json(poses[t][i]));
        }
        write_png(dir / numbered("frame", static_cast<int>(t)), to_image8(render_edit_state(model, at)));
        tracks.push_back(frame);
      }
      write_text(dir / "poses.json", nlohmann::json{{"scene", to_json(s)}, {"poses", tracks}}.dump(2));
      std::cout << "wrote " << poses.size() << " frames to " << out_dir << std::endl;
      return 0;
    }
    if (eval->parsed()) {
      const auto model = load_generator(ckpt);
      EmbedderSpec spec;
      spec.seed = embedder_seed;
      MetricReport r;
      if (metric == "disentangle") {
        r = disentanglement_report(model, n_eval > 0 ? static_cast<int>(n_eval) : 100,
                                   k > 0 ? k : model->config.k_max, seed);
      } else {
        if (data.empty()) throw std::invalid_argument("--data is required for " + metric);
        const auto test = manifest_at(data, "test");
        if (metric == "fid") {
          r = fid_proxy(model, test, n_eval > 0 ? n_eval : 1000, spec, seed);
        } else {
          r = fvd_proxy(model, test, n_eval > 0 ? n_eval : 200, clip_len > 0 ? clip_len : model->config.clip_length,
                        spec, seed);
        }
      }
      const auto text = r.to_json().dump(2);
      if (report.empty()) std::cout << text << std::endl;
      else write_text(report, text + "\n");
      return 0;
    }
    if (serve->parsed()) {
      StudioService service(load_generator(ckpt));
      std::cout << "serving on " << host << ":" << port << std::endl;
      service.listen(host, port);
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
  return 1;
}

}  // namespace relate::cli
