// Acceptance runner: one PASS/FAIL line per criterion, details on the
// following indented lines. Trained models are cached under --work so a
// rerun only repeats the measurements.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "checks.hpp"
#include "relate/checkpoint.hpp"
#include "relate/data.hpp"
#include "relate/eval.hpp"
#include "relate/interaction.hpp"
#include "relate/trainer.hpp"

using namespace relate;
using namespace relate::checks;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path work = fs::temp_directory_path() / "relate-acceptance";
  std::int64_t steps = 3000;
  std::int64_t dynamic_steps = 1500;
  int clip_length = 8;
  int batch = 16;
  int train_items = 2000;
  int test_items = 500;
  std::int64_t fid_samples = 500;
  int dis_scenes = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<int> only;
  bool verbose = false;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Report {
  void detail(const std::string& line) { std::cout << "    " << line << std::endl; }
  bool finish(int id, const std::string& title, bool pass) {
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << title << std::endl;
    return pass;
  }
};

bool criterion_interaction(Report& r) {
  double eq = 0.0, dyn = 0.0;
  for (int K : {1, 2, 3, 5, 8})
    for (std::uint64_t s = 0; s < 3; ++s) {
      eq = std::max(eq, correction_equivariance(K, s));
      dyn = std::max(dyn, dynamics_equivariance(K, s));
    }
  double oracle = 0.0, dyn_oracle = 0.0;
  for (int K : {1, 2, 3, 5, 8})
    for (std::uint64_t s = 0; s < 3; ++s) {
      oracle = std::max({oracle, correction_oracle_error(K, s), ordered_oracle_error(K, s)});
      dyn_oracle = std::max(dyn_oracle, dynamics_oracle_error(K, s));
    }
  double empty = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) empty = std::max(empty, single_object_embedding(s));
  r.detail("correct_poses equivariance (32-bit) max dev " + fmt(eq) + " (< 1e-6)");
  r.detail("step_dynamics equivariance (32-bit) max dev " + fmt(dyn) + " (< 1e-6)");
  r.detail("pairwise-sum oracle, correction and ordered chain " + fmt(oracle) + " (< 1e-6)");
  r.detail("pairwise-sum oracle, dynamics " + fmt(dyn_oracle) + " (< 1e-6)");
  r.detail("empty interaction sum at K = 1: " + fmt(empty) + " (== 0)");
  return eq < 1e-6 && dyn < 1e-6 && oracle < 1e-6 && dyn_oracle < 1e-6 && empty == 0.0;
}

bool criterion_gradients(Report& r) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& [name, err] : gradient_suite()) {
    r.detail(name + ": rel. err " + fmt(err) + " (< 1e-4)");
    ok = ok && err < 1e-4;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.detail("runtime " + fmt(secs) + " s (< 300 s)");
  return ok && secs < 300.0;
}

bool criterion_gradient_stop(Report& r) {
  double stopped = 0.0, live = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto [a, b] = position_target_gradient(s);
    stopped = std::max(stopped, a);
    live = std::max(live, b);
  }
  r.detail("target-branch gradient into pose correction " + fmt(stopped) + " (< 1e-12)");
  r.detail("same branch without the stop " + fmt(live) + " (non-zero, shows the probe is live)");
  return stopped < 1e-12 && live > 0.0;
}

bool criterion_rendering(Report& r) {
  std::int64_t stray = 0;
  for (std::uint64_t s = 0; s < 3; ++s) stray += window_sparsity(tiny_config(), s).first;
  double integer = 0.0, fractional = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    integer = std::max(integer, integer_shift_error(s));
    fractional = std::max(fractional, fractional_shift_error(s));
  }
  bool pooling = true, unit = true;
  for (std::uint64_t s = 0; s < 3; ++s) {
    pooling = pooling && pooling_permutation_exact(Pooling::kMax, s) && pooling_permutation_exact(Pooling::kSum, s);
    unit = unit && unit_scale_identical(s);
  }
  r.detail("nonzero sites outside the window: " + std::to_string(stray) + " (== 0)");
  r.detail("integer shift vs oracle " + fmt(integer) + " (== 0)");
  r.detail("fractional shift vs bilinear oracle " + fmt(fractional) + " (< 1e-6)");
  r.detail(std::string("pooling permutation bit-exact: ") + (pooling ? "yes" : "no"));
  r.detail(std::string("unit scale bit-identical to unscaled path: ") + (unit ? "yes" : "no"));
  return stray == 0 && integer == 0.0 && fractional < 1e-6 && pooling && unit;
}

bool criterion_metrics(Report& r) {
  const double self = frechet_self_distance(0);
  const double gauss = gaussian_frechet_error(100000, 0);
  const double oracle = disc_oracle_median(0);
  r.detail("Frechet self-distance " + fmt(self) + " (< 1e-6)");
  r.detail("N(0,1) vs N(1,1) at n = 1e5: relative error " + fmt(gauss) + " (< 0.05)");
  r.detail("disc-oracle disentanglement median " + fmt(oracle) + " px (<= 1)");
  return self < 1e-6 && gauss < 0.05 && oracle <= 1.0;
}

bool criterion_persistence(Report& r, const Options& o) {
  const auto dir = o.work / "persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const bool round = checkpoint_round_trip(dir);
  const bool repro = train_reproducible(10);
  const bool resume = resume_equals_continuous(10, 4);
  r.detail(std::string("checkpoint round trip byte-identical: ") + (round ? "yes" : "no"));
  r.detail(std::string("10-step seeded checksum reproducible: ") + (repro ? "yes" : "no"));
  r.detail(std::string("resume equals continuous: ") + (resume ? "yes" : "no"));
  return round && repro && resume;
}

// ---- Training-based criteria ------------------------------------------------

std::pair<DatasetManifest, DatasetManifest> dataset(const std::string& name, std::uint64_t seed, int n_train,
                                                    int n_test, int frames, int side, const fs::path& dir) {
  if (fs::exists(dir / "train" / "manifest.json") && fs::exists(dir / "test" / "manifest.json"))
    return {load_manifest(dir / "train"), load_manifest(dir / "test")};
  return generate_dataset(name, seed, n_train, n_test, frames, side, dir);
}

/// Trains once; a finished run in `dir` with the same configuration is reused.
ModelCheckpoint trained(const DatasetManifest& data, const ModelConfig& model, const TrainConfig& tc,
                        const fs::path& dir, bool verbose) {
  const auto final_ckpt = dir / "final.ckpt";
  if (fs::exists(final_ckpt)) {
    auto c = load_checkpoint(final_ckpt);
    if (c.model == model && c.train == tc) return c;
  }
  fs::remove_all(dir);
  TrainOptions opts;
  opts.out_dir = dir;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](const StepMetrics& m) {
    if (verbose && m.step % 250 == 0)
      std::cerr << dir.filename().string() << " step " << m.step << " d " << m.d_loss << " g " << m.g_loss << " pos "
                << m.pos_loss << std::endl;
  };
  auto c = train(data, model, tc, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << dir.filename().string() << ": " << tc.max_steps << " steps in " << fmt(secs) << " s" << std::endl;
  return c;
}

TrainConfig toy_train(const Options& o, std::int64_t steps, std::uint64_t seed) {
  auto t = preset("balls_in_bowl").train;
  t.batch_size = o.batch;
  t.max_steps = steps;
  t.epochs = 1000;
  t.seed = seed;
  return t;
}

/// Mean pixel error of the trained position head on single-object renders
/// of generated scenes, against the poses the generator used.
double position_head_error(const ModelCheckpoint& ckpt, std::uint64_t seed) {
  auto state = from_checkpoint(ckpt);
  state.generator->eval();
  state.discriminator->eval();
  torch::NoGradGuard guard;
  auto rng = Rng::for_stream(seed, 0);
  const auto& cfg = state.model;
  const auto batch = sample_scene_batch(rng, cfg, 200);
  const auto index = torch::zeros({200}, torch::kLong);
  const auto solo = state.generator->render_solo(batch, index);
  const auto pred = regress_position(solo.image, state.discriminator);
  const auto err = (pred - solo.target).to(torch::kFloat64) * (cfg.image_side / 2.0);
  return err.pow(2).sum(1).sqrt().mean().item<double>();
}

struct StaticRuns {
  std::vector<ModelCheckpoint> full;
};

bool criterion_toy_training(Report& r, const Options& o, StaticRuns& runs) {
  const auto [train_set, test_set] =
      dataset("balls_in_bowl", 5, o.train_items, o.test_items, 1, 32, o.work / "data_balls32");
  const auto full_cfg = toy_scale(preset("balls_in_bowl").model);
  auto ablated_cfg = full_cfg;
  ablated_cfg.correction = CorrectionMode::kIdentity;
  const EmbedderSpec embedder;
  int fid_wins = 0, dis_wins = 0, below_null = 0;
  for (const auto seed : o.seeds) {
    const auto tc = toy_train(o, o.steps, seed);
    auto ablated_tc = tc;
    ablated_tc.position_regularizer = false;
    const auto full = trained(train_set, full_cfg, tc, o.work / ("full_s" + std::to_string(seed)), o.verbose);
    const auto ablated =
        trained(train_set, ablated_cfg, ablated_tc, o.work / ("nogamma_s" + std::to_string(seed)), o.verbose);
    runs.full.push_back(full);
    const auto g_full = generator_from_checkpoint(full);
    const auto g_abl = generator_from_checkpoint(ablated);

    const double fid_full = fid_proxy(g_full, test_set, o.fid_samples, embedder, 100 + seed).value;
    const double fid_abl = fid_proxy(g_abl, test_set, o.fid_samples, embedder, 100 + seed).value;
    const double fid_untrained =
        fid_proxy(generator_from_checkpoint(to_checkpoint(make_state(full_cfg, tc))), test_set, o.fid_samples, embedder,
                  100 + seed)
            .value;
    const auto dis_full = disentanglement_report(g_full, o.dis_scenes, full_cfg.k_max, 200 + seed);
    const auto dis_abl = disentanglement_report(g_abl, o.dis_scenes, full_cfg.k_max, 200 + seed);
    const double q05 = dis_full.extra["null_median_q05"].get<double>();

    fid_wins += fid_full < fid_abl;
    dis_wins += dis_full.value < dis_abl.value;
    below_null += dis_full.value < q05;
    r.detail("seed " + std::to_string(seed) + ": fid_proxy full " + fmt(fid_full) + " vs no-gamma " + fmt(fid_abl) +
             " (untrained " + fmt(fid_untrained) + "); disentanglement full " + fmt(dis_full.value) +
             " px vs no-gamma " + fmt(dis_abl.value) + " px, null q05 " + fmt(q05) + " px, null median " +
             fmt(dis_full.extra["null_median"].get<double>()) + " px");
    r.detail("seed " + std::to_string(seed) + ": position head mean error " +
             fmt(position_head_error(full, 300 + seed)) + " px of " + std::to_string(full_cfg.image_side) +
             " (target < 10%)");
  }
  const int n = static_cast<int>(o.seeds.size());
  r.detail("(a) fid_proxy full < no-gamma in " + std::to_string(fid_wins) + "/" + std::to_string(n) + " seeds (>= 2)");
  r.detail("(b) full below null q05 in " + std::to_string(below_null) + "/" + std::to_string(n) +
           " seeds (all); below no-gamma in " + std::to_string(dis_wins) + "/" + std::to_string(n) + " seeds (>= 2)");
  return fid_wins * 3 >= 2 * n && below_null == n && dis_wins * 3 >= 2 * n;
}

bool criterion_dynamics(Report& r, const Options& o) {
  const double tele = telescoping_error(30, 0);
  r.detail("rollout telescoping over 30 frames " + fmt(tele) + " (< 1e-5)");

  const int seq_len = 30;
  const auto [train_set, test_set] = dataset("balls_in_bowl", 6, o.train_items / 5, o.test_items / 2, seq_len, 32,
                                             o.work / "data_balls32_seq");
  const auto run = dynamic_variant(preset("balls_in_bowl"), o.clip_length);
  const auto cfg = toy_scale(run.model);
  auto tc = toy_train(o, o.dynamic_steps, 0);
  tc.batch_size = std::max(4, o.batch / 2);
  const auto ckpt = trained(train_set, cfg, tc, o.work / "dynamic_s0", o.verbose);
  const auto g = generator_from_checkpoint(ckpt);
  const EmbedderSpec embedder;
  const auto n = static_cast<std::int64_t>(test_set.items.size());
  const auto model = fvd_proxy(g, test_set, n, o.clip_length, embedder, 7);
  const auto shuffled = fvd_of_clips(time_shuffle_baseline(test_set, n, o.clip_length, 8), test_set, o.clip_length,
                                     embedder, 7, "fvd_time_shuffle");
  const auto intact = fvd_of_clips(manifest_clips(test_set, n, o.clip_length, 8), test_set, o.clip_length, embedder, 7,
                                   "fvd_intact");
  r.detail("fvd_proxy model " + fmt(model.value) + " vs time-shuffled test clips " + fmt(shuffled.value) +
           " (intact test clips " + fmt(intact.value) + "), " + std::to_string(n) + " clips of " +
           std::to_string(o.clip_length) + " frames");
  return tele < 1e-5 && model.value < shuffled.value;
}

bool check_image(const torch::Tensor& img, int side) {
  return img.dim() == 3 && img.size(0) == 3 && img.size(1) == side && img.size(2) == side &&
         torch::isfinite(img).all().item<bool>() && img.min().item<double>() >= -1.0 && img.max().item<double>() <= 1.0;
}

bool criterion_out_of_distribution(Report& r, const Options& o, const StaticRuns& runs) {
  // Two-object model from criterion 5 (trained here if that criterion was skipped).
  ModelCheckpoint two;
  if (!runs.full.empty()) {
    two = runs.full.front();
  } else {
    const auto [train_set, test_set] =
        dataset("balls_in_bowl", 5, o.train_items, o.test_items, 1, 32, o.work / "data_balls32");
    two = trained(train_set, toy_scale(preset("balls_in_bowl").model), toy_train(o, o.steps, 0), o.work / "full_s0",
                  o.verbose);
  }
  const auto g2 = generator_from_checkpoint(two);
  bool ok = g2->config.k_max == 2;
  int rendered = 0;
  {
    torch::NoGradGuard guard;
    auto rng = Rng::for_stream(41, 0);
    for (int i = 0; i < 20; ++i) {
      const auto img = render_latent_scene(g2, corrected(sample_scene(rng, g2->config, 4), g2));
      ok = ok && check_image(img, g2->config.image_side);
      ++rendered;
    }
    const auto batch = g2->forward(sample_scene_batch(rng, g2->config, 8, 4));
    ok = ok && batch.sizes() == torch::IntArrayRef({8, 3, 32, 32}) && batch.abs().max().item<double>() <= 1.0;
  }
  r.detail("K_max = 2 model, K = 4: " + std::to_string(rendered) + " scenes plus a batch of 8 rendered in range");

  const auto [stacks_train, stacks_test] =
      dataset("stacks", 9, o.train_items, 10, 1, 32, o.work / "data_stacks32");
  const auto stacks_cfg = toy_scale(preset("shapestacks").model);
  const auto stacks = generator_from_checkpoint(
      trained(stacks_train, stacks_cfg, toy_train(o, std::max<std::int64_t>(1, o.steps / 10), 0), o.work / "stacks_s0",
              o.verbose));
  bool tower_ok = true;
  double height = 0.0;
  {
    torch::NoGradGuard guard;
    auto rng = Rng::for_stream(42, 0);
    for (int i = 0; i < 20; ++i) {
      const auto scene = corrected(sample_scene(rng, stacks->config, 7), stacks);
      tower_ok = tower_ok && scene.K() == 7 && check_image(render_latent_scene(stacks, scene), stacks->config.image_side);
      height += std::abs(scene.objects.back().theta->y - scene.objects.front().theta->y) / 20.0;
    }
  }
  r.detail("stacks model (K_max = " + std::to_string(stacks_cfg.k_max) + "), height-7 towers: 20 rendered in range, " +
           "mean base-to-top pose span " + fmt(height));
  return ok && tower_ok;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  Options o;
  CLI::App app{"Acceptance checks"};
  std::string work = o.work.string();
  app.add_option("--work", work, "Cache directory for datasets and trained models");
  app.add_option("--steps", o.steps, "Training steps per static toy run");
  app.add_option("--dynamic-steps", o.dynamic_steps, "Training steps for the dynamic toy run");
  app.add_option("--clip-length", o.clip_length, "Frames per training and evaluation clip");
  app.add_option("--batch", o.batch, "Batch size for the toy runs");
  app.add_option("--train-items", o.train_items, "Training images for the static toy dataset");
  app.add_option("--test-items", o.test_items, "Test images for the static toy dataset");
  app.add_option("--fid-samples", o.fid_samples, "Generated samples per fid_proxy");
  app.add_option("--dis-scenes", o.dis_scenes, "Scenes per disentanglement score");
  app.add_option("--seeds", o.seeds, "Training seeds for the static toy runs");
  app.add_option("--only", o.only, "Run only these criteria");
  app.add_flag("--verbose", o.verbose, "Print training progress");
  CLI11_PARSE(app, argc, argv);
  o.work = work;
  fs::create_directories(o.work);

  const auto wanted = [&](int id) { return o.only.empty() || std::find(o.only.begin(), o.only.end(), id) != o.only.end(); };
  Report report;
  StaticRuns runs;
  int failed = 0;
  const auto run = [&](int id, const std::string& title, const std::function<bool()>& body) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    try {
      pass = body();
    } catch (const std::exception& ex) {
      report.detail(std::string("error: ") + ex.what());
    }
    report.detail("(" + fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
    failed += !report.finish(id, title, pass);
  };

  run(1, "interaction-module equivariance and oracles", [&] { return criterion_interaction(report); });
  run(2, "gradient suite", [&] { return criterion_gradients(report); });
  run(3, "position-loss gradient stop", [&] { return criterion_gradient_stop(report); });
  run(4, "rendering invariants", [&] { return criterion_rendering(report); });
  run(5, "toy training, full vs no-gamma", [&] { return criterion_toy_training(report, o, runs); });
  run(6, "dynamics: fvd_proxy vs time shuffle, telescoping", [&] { return criterion_dynamics(report, o); });
  run(7, "metric self-tests", [&] { return criterion_metrics(report); });
  run(8, "persistence and determinism", [&] { return criterion_persistence(report, o); });
  run(9, "out-of-distribution object counts", [&] { return criterion_out_of_distribution(report, o, runs); });
  return failed == 0 ? 0 : 1;
}
