// Acceptance suite: one pass/fail line per criterion, nonzero exit on
// any failure. The directional checks run small models on a seeded
// synthetic stream; everything else is an exact oracle.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "clad/experiment.hpp"
#include "clad/memory.hpp"
#include "clad/metrics.hpp"
#include "clad/scoring.hpp"
#include "clad/strategy.hpp"

using namespace clad;
namespace fs = std::filesystem;

namespace {

struct Failure {
  std::string detail;
};

void require(bool ok, const std::string& detail) {
  if (!ok) throw Failure{detail};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

FeatureStats gaussian_1d(double mean, double var) {
  FeatureStats s;
  s.mean = Eigen::VectorXd::Constant(1, mean);
  s.covariance = Eigen::MatrixXd::Constant(1, 1, var);
  s.sample_count = 2;
  return s;
}

// ---- criterion 1: FID metric exactness -------------------------------

void check_fid_exactness() {
  double a = fid(gaussian_1d(0, 1), gaussian_1d(3, 1));
  require(std::abs(a - 9.0) <= 1e-6, "fid(N(0,1),N(3,1)) = " + fmt(a) + ", want 9.0");
  double b = fid(gaussian_1d(2, 1), gaussian_1d(2, 4));
  require(std::abs(b - 1.0) <= 1e-6, "fid(var 1 vs 4) = " + fmt(b) + ", want 1.0");

  std::mt19937_64 rng(5);
  std::vector<ImageTensor> images;
  for (int i = 0; i < 8; ++i) {
    std::vector<std::uint8_t> vals(16 * 16 * 3);
    for (auto& v : vals) v = static_cast<std::uint8_t>(rng() % 256);
    images.push_back(ImageTensor::from_u8(16, 16, std::move(vals)));
  }
  PatchStatsExtractor ex(2);
  FeatureStats s = extract_features(images, ex);
  double self = fid(s, s);
  require(self <= 1e-6, "fid(X,X) = " + fmt(self));
}

// ---- criterion 2: f1 oracle equivalence ------------------------------

void check_f1_oracles() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<float> score(0.0f, 1.0f);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_img = 1 + trial % 3;
    std::vector<AnomalyMap> maps;
    std::vector<PixelMask> gts;
    for (int i = 0; i < n_img; ++i) {
      AnomalyMap m;
      m.height = m.width = 8;
      m.scores.resize(64);
      for (auto& s : m.scores) s = score(rng);
      maps.push_back(std::move(m));
      PixelMask gt(8, 8);
      for (auto& v : gt.values()) v = (rng() % 100) < 20 + trial % 50;
      gts.push_back(std::move(gt));

      // pixel_f1 vs brute-force confusion counts.
      PixelMask pred = binarize(maps.back(), 0.5f);
      long tp = 0, fp = 0, fn = 0;
      for (int p = 0; p < 64; ++p) {
        bool pv = pred.values()[p], gv = gts.back().values()[p];
        tp += pv && gv;
        fp += pv && !gv;
        fn += !pv && gv;
      }
      double expect = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
      double got = pixel_f1(pred, gts.back());
      require(got == expect, "pixel_f1 " + fmt(got) + " != brute " + fmt(expect));
    }

    const int grid = 101;
    ThresholdResult got = best_f1_threshold(maps, gts, grid);
    double best = -1.0;
    for (int g = 0; g < grid; ++g) {
      float thr = static_cast<float>(g) / (grid - 1);
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < maps.size(); ++i)
        for (int p = 0; p < 64; ++p) {
          bool pv = maps[i].scores[p] > thr, gv = gts[i].values()[p];
          tp += pv && gv;
          fp += pv && !gv;
          fn += !pv && gv;
        }
      best = std::max(best, tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn));
    }
    require(std::abs(got.f1 - best) <= 1e-6,
            "best_f1_threshold " + fmt(got.f1) + " != brute " + fmt(best));
  }
}

// ---- criterion 3: forgetting formula ---------------------------------

void check_forgetting_formula() {
  ScoreMatrix m("pixel_f1", 2);
  m.set(1, 1, 0.4);
  m.set(2, 1, 0.2);
  m.set(2, 2, 0.9);
  double v = average_forgetting(m, 2).value;
  require(v == 0.5, "hand matrix forgetting = " + fmt(v) + ", want exactly 0.5");

  ScoreMatrix zero("pixel_f1", 2);
  zero.set(1, 1, 0.4);
  zero.set(2, 1, 0.4);
  zero.set(2, 2, 0.9);
  require(average_forgetting(zero, 2).value == 0.0, "zero-forgetting case nonzero");

  ScoreMatrix improve("pixel_f1", 2);
  improve.set(1, 1, 0.4);
  improve.set(2, 1, 0.8);
  improve.set(2, 2, 0.9);
  require(average_forgetting(improve, 2).value < 0.0, "improvement must be negative");
}

// ---- criterion 4: compression factors + byte budget ------------------

void check_compression_and_budget() {
  auto factor = [](MemoryKind kind, int working) {
    MemoryConfig c;
    c.kind = kind;
    c.working_size = working;
    return MemoryModule(c);
  };
  require(factor(MemoryKind::Scale, 256).compression_factor() == 64.0, "SCALE factor != 64");
  require(factor(MemoryKind::LatentCAE, 256).compression_factor() == 6.0, "CAE factor != 6");
  require(factor(MemoryKind::RawLow, 256).compression_factor() == 1.0, "raw factor != 1");
  auto vae = factor(MemoryKind::LatentVAE, 256).compression_report();
  require(vae.computed == 192.0 && vae.discrepancy() && vae.quoted == 196.0,
          "VAE factor " + fmt(vae.computed) + ", discrepancy flag " +
              (vae.discrepancy() ? "set" : "missing"));

  MemoryConfig c;
  c.kind = MemoryKind::RawLow;
  c.working_size = 8;
  c.budget_bytes = 7 * 8 * 8 * 3;
  c.seed = 3;
  MemoryModule mem(c);
  std::mt19937_64 rng(99);
  std::vector<ImageTensor> pool;
  for (int i = 0; i < 16; ++i) pool.push_back(ImageTensor::constant_u8(8, 8, i * 16));
  for (int step = 0; step < 10000; ++step) {
    std::vector<ImageTensor> batch(pool.begin(), pool.begin() + 1 + rng() % 3);
    mem.store(batch, 1 + static_cast<int>(rng() % 5));
    require(mem.bytes_used() <= mem.budget().budget_bytes,
            "budget exceeded at step " + std::to_string(step));
    if (step % 5 == 0) mem.retrieve(2);
  }
}

// ---- criterion 5: balanced quota -------------------------------------

void check_balanced_quota() {
  MemoryConfig c;
  c.kind = MemoryKind::RawLow;
  c.working_size = 32;
  c.seed = 1;
  MemoryModule mem(c);  // default budget: 40 raw images
  std::mt19937_64 rng(11);
  for (int task = 1; task <= 10; ++task) {
    std::vector<ImageTensor> images;
    for (int i = 0; i < 20; ++i) {
      std::vector<std::uint8_t> vals(32 * 32 * 3);
      for (auto& v : vals) v = static_cast<std::uint8_t>(rng() % 256);
      images.push_back(ImageTensor::from_u8(32, 32, std::move(vals)));
    }
    mem.store(images, task);
  }
  auto counts = mem.per_task_counts();
  require(counts.size() == 10, "expected 10 tasks represented");
  for (const auto& [task, count] : counts)
    require(count == 4, "task " + std::to_string(task) + " holds " + std::to_string(count) +
                            " items, want 4");
}

// ---- criterion 6: SCALE protocol fidelity ----------------------------

void check_scale_protocol() {
  StrategyConfig config;
  config.strategy_kind = StrategyKind::CompressedReplay;
  config.ad_model_kind = ModelKind::SRGen;
  config.arch.working_size = 32;
  config.arch.base_channels = 4;
  config.epochs = 1;
  config.replay_batch_n = 4;
  config.seed = 5;

  TaskStream stream = generate_synthetic_stream(2, 4, 32, 5);
  ReconstructorHandle sr = build_model(ModelKind::SRGen, config.arch);
  MemoryConfig mc;
  mc.kind = MemoryKind::Scale;
  mc.working_size = 32;
  MemoryModule memory(mc);

  std::mt19937_64 rng(1);
  scale_train_task(sr, memory, stream.task(1), config, rng, nullptr);
  ModelSnapshot sr1 = snapshot(sr, 1);
  memory.store(stream.task(1).train_images, 1);

  auto live_before = sr.clone();
  auto pairs = scale_old_pairs(memory, sr1, 8, 32, rng);  // the task-2 old-target source
  require(pairs.size() == 8, "expected 8 old pairs");
  for (auto& [input, target] : pairs) {
    auto ref = reconstruct_with(sr1, {input});
    require(target.reals() == ref[0].reals(), "old-task target not bit-identical to SR_1 output");
    bool from_memory = false;
    for (const MemoryItem& item : memory.items())
      from_memory |= resize_image(item.image, 32, ResizeMode::Smooth) == input;
    require(from_memory, "old-task input is not a rescaled stored item");
  }
  auto live = sr.parameters();
  auto saved = live_before->parameters();
  for (std::size_t i = 0; i < live.size(); ++i)
    require(*live[i].value == *saved[i].value, "live parameters changed by target generation");
}

// ---- criterion 7: directional CL orderings ---------------------------

struct DirectionalSummary {
  double f_t_finetune, f_t_low, s_t_high, s_t_low, fid_scale, fid_degen;
};

double median3(double a, double b, double c) {
  std::vector<double> v{a, b, c};
  std::sort(v.begin(), v.end());
  return v[1];
}

void check_directional_orderings() {
  const int tasks = 3;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  TaskStream stream = generate_synthetic_stream(tasks, 12, 64, 424242);

  auto base = [&](StrategyKind strategy, ModelKind model, std::uint64_t seed) {
    StrategyConfig c;
    c.strategy_kind = strategy;
    c.ad_model_kind = model;
    c.arch.working_size = 64;
    c.arch.base_channels = 8;
    c.arch.batch_size = 6;
    c.arch.learning_rate = 1e-3f;
    c.arch.kl_weight = 0.01f;
    c.replay_batch_n = 6;
    c.epochs = 200;
    c.seed = seed;
    return c;
  };

  std::vector<DirectionalSummary> per_seed;
  for (std::uint64_t seed : seeds) {
    DirectionalSummary s{};

    StrategyConfig fine = base(StrategyKind::FineTuning, ModelKind::VAE, seed);
    RunResult fine_run = run_stream(fine, stream);
    s.f_t_finetune = average_forgetting(fine_run.f1_matrix, tasks).value;

    StrategyConfig low = base(StrategyKind::ReplayLowMem, ModelKind::VAE, seed);
    low.budget_bytes = 6u * 64 * 64 * 3;  // tight enough to bite at 3 tasks
    RunResult low_run = run_stream(low, stream);
    s.f_t_low = average_forgetting(low_run.f1_matrix, tasks).value;
    s.s_t_low = average_score(low_run.f1_matrix, tasks);

    StrategyConfig high = base(StrategyKind::ReplayHighMem, ModelKind::VAE, seed);
    RunResult high_run = run_stream(high, stream);
    s.s_t_high = average_score(high_run.f1_matrix, tasks);

    StrategyConfig scale = base(StrategyKind::CompressedReplay, ModelKind::SRGen, seed);
    RunResult scale_run = run_stream(scale, stream);
    s.fid_scale = scale_run.fid_matrix.row_mean(tasks);

    StrategyConfig degen = base(StrategyKind::DegenerativeCompressedReplay, ModelKind::SRGen, seed);
    RunResult degen_run = run_stream(degen, stream);
    s.fid_degen = degen_run.fid_matrix.row_mean(tasks);

    per_seed.push_back(s);
  }

  double ft_fine = median3(per_seed[0].f_t_finetune, per_seed[1].f_t_finetune,
                           per_seed[2].f_t_finetune);
  double ft_low = median3(per_seed[0].f_t_low, per_seed[1].f_t_low, per_seed[2].f_t_low);
  double st_high = median3(per_seed[0].s_t_high, per_seed[1].s_t_high, per_seed[2].s_t_high);
  double st_low = median3(per_seed[0].s_t_low, per_seed[1].s_t_low, per_seed[2].s_t_low);
  double fid_scale = median3(per_seed[0].fid_scale, per_seed[1].fid_scale, per_seed[2].fid_scale);
  double fid_degen = median3(per_seed[0].fid_degen, per_seed[1].fid_degen, per_seed[2].fid_degen);

  require(ft_fine - ft_low >= 0.1, "F_T(fine-tune) - F_T(replay low) = " +
                                       fmt(ft_fine - ft_low) + " (" + fmt(ft_fine) + " vs " +
                                       fmt(ft_low) + "), want >= 0.1");
  require(st_high >= st_low - 0.02, "S_T(high) = " + fmt(st_high) + " < S_T(low) - 0.02 = " +
                                        fmt(st_low - 0.02));
  require(fid_degen >= fid_scale - 1.0, "FID(degen) = " + fmt(fid_degen) +
                                            " < FID(scale) - 1.0 = " + fmt(fid_scale - 1.0));
}

// ---- criterion 8: inpaint averaging + coverage -----------------------

void check_inpaint_averaging() {
  ArchitectureConfig arch;
  arch.working_size = 32;
  arch.base_channels = 4;
  arch.seed = 8;
  ReconstructorHandle model = build_model(ModelKind::InpaintGen, arch);

  std::mt19937_64 rng(9);
  std::vector<std::uint8_t> vals(32 * 32 * 3);
  for (auto& v : vals) v = static_cast<std::uint8_t>(rng() % 256);
  ImageTensor img = ImageTensor::from_u8(32, 32, std::move(vals));

  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    MaskSet set = build_mask_set(32, 32, 8, 3, seed);
    require(set.min_coverage() >= 1, "mask set leaves pixels uncovered");
  }

  MaskSet set = build_mask_set(32, 32, 8, 2, 17);
  ImageTensor estimate = inpaint_reconstruct(model, img, set);

  ImageTensor unit = img.to_unit();
  std::vector<double> sums(32 * 32 * 3, 0.0);
  std::vector<int> counts(32 * 32, 0);
  for (const PixelMask& mask : set.masks) {
    std::vector<float> masked = unit.reals();
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (mask.at(y, x))
          for (int ch = 0; ch < 3; ++ch) masked[unit.index(y, x, ch)] = 0.5f;
    ImageTensor fill =
        model.reconstruct({ImageTensor::from_unit(32, 32, std::move(masked))})[0].to_unit();
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (mask.at(y, x)) {
          for (int ch = 0; ch < 3; ++ch) sums[unit.index(y, x, ch)] += fill.at_unit(y, x, ch);
          ++counts[y * 32 + x];
        }
  }
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float direct = static_cast<float>(sums[unit.index(y, x, ch)] / counts[y * 32 + x]);
        require(estimate.at_unit(y, x, ch) == direct,
                "estimate differs from the direct per-pass average");
      }
}

// ---- criterion 9: end-to-end determinism -----------------------------

void check_end_to_end_determinism() {
  TaskStream stream = generate_synthetic_stream(3, 4, 32, 31);
  StrategyConfig config;
  config.strategy_kind = StrategyKind::CompressedReplay;
  config.ad_model_kind = ModelKind::SRGen;
  config.arch.working_size = 32;
  config.arch.base_channels = 4;
  config.arch.batch_size = 4;
  config.replay_batch_n = 4;
  config.epochs = 2;
  config.seed = 77;

  auto csv = [](const ScoreMatrix& m) {
    std::ostringstream out;
    m.to_csv(out);
    return out.str();
  };

  RunResult a = run_stream(config, stream);
  RunResult b = run_stream(config, stream);
  require(csv(a.f1_matrix) == csv(b.f1_matrix), "repeated run: f1 CSVs differ");
  require(csv(a.fid_matrix) == csv(b.fid_matrix), "repeated run: fid CSVs differ");

  fs::path ckdir = fs::temp_directory_path() / "clad_acceptance_resume";
  fs::remove_all(ckdir);
  run_stream(config, stream, ckdir, 2);  // interrupt after task 2
  RunResult resumed = run_stream(config, stream, ckdir);
  require(csv(a.f1_matrix) == csv(resumed.f1_matrix), "resumed run: f1 CSVs differ");
  require(csv(a.fid_matrix) == csv(resumed.fid_matrix), "resumed run: fid CSVs differ");
  fs::remove_all(ckdir);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void()>>> criteria = {
      {"metric exactness (FID closed forms)", check_fid_exactness},
      {"f1 oracle equivalence", check_f1_oracles},
      {"forgetting formula", check_forgetting_formula},
      {"compression factors and byte budget", check_compression_and_budget},
      {"balanced quota (40 images over 10 tasks)", check_balanced_quota},
      {"SCALE protocol fidelity", check_scale_protocol},
      {"directional CL orderings", check_directional_orderings},
      {"inpaint averaging and mask coverage", check_inpaint_averaging},
      {"end-to-end determinism and resume", check_end_to_end_determinism},
  };

  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
      double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("PASS: %s (%.1fs)\n", name.c_str(), dt);
    } catch (const Failure& f) {
      std::printf("FAIL: %s — %s\n", name.c_str(), f.detail.c_str());
      ++failures;
    } catch (const std::exception& e) {
      std::printf("FAIL: %s — unexpected error: %s\n", name.c_str(), e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
