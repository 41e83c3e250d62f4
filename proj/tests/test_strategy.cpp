#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "clad/strategy.hpp"

using namespace clad;
namespace fs = std::filesystem;

namespace {

StrategyConfig small_config(StrategyKind strategy, ModelKind model, std::uint64_t seed = 1) {
  StrategyConfig c;
  c.strategy_kind = strategy;
  c.ad_model_kind = model;
  c.arch.working_size = 32;
  c.arch.base_channels = 4;
  c.arch.batch_size = 4;
  c.replay_batch_n = 4;
  c.epochs = 2;
  c.seed = seed;
  c.inpaint_patch = 8;
  c.inpaint_passes = 2;
  return c;
}

std::string matrix_csv(const ScoreMatrix& m) {
  std::ostringstream out;
  m.to_csv(out);
  return out.str();
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (StrategyKind k :
       {StrategyKind::SingleModel, StrategyKind::FineTuning, StrategyKind::ReplayHighMem,
        StrategyKind::ReplayLowMem, StrategyKind::CompressedReplay,
        StrategyKind::DegenerativeCompressedReplay, StrategyKind::GenerativeReplay})
    CHECK(strategy_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(strategy_kind_from_string("nope"), std::invalid_argument);
}

TEST_CASE("incompatible strategy/model pairs are rejected before training") {
  CHECK_THROWS_AS(
      validate_strategy_config(small_config(StrategyKind::GenerativeReplay, ModelKind::CAE)),
      std::invalid_argument);
  CHECK_THROWS_AS(validate_strategy_config(
                      small_config(StrategyKind::DegenerativeCompressedReplay, ModelKind::VAE)),
                  std::invalid_argument);
  CHECK_THROWS_AS(validate_strategy_config(
                      small_config(StrategyKind::CompressedReplay, ModelKind::InpaintGen)),
                  std::invalid_argument);

  StrategyConfig paired_finetune = small_config(StrategyKind::FineTuning, ModelKind::CAE);
  paired_finetune.paired_memory_model = true;
  CHECK_THROWS_AS(validate_strategy_config(paired_finetune), std::invalid_argument);

  // Pairing with a memory kind that cannot regenerate images is refused.
  CHECK_THROWS_AS(pair_memory_with_ad(ModelKind::InpaintGen, ModelKind::CAE,
                                      small_config(StrategyKind::CompressedReplay, ModelKind::CAE)),
                  std::invalid_argument);

  // Valid pairing: SR memory with an inpainting AD model.
  StrategyConfig ok = pair_memory_with_ad(
      ModelKind::SRGen, ModelKind::InpaintGen,
      small_config(StrategyKind::CompressedReplay, ModelKind::InpaintGen));
  CHECK(ok.paired_memory_model);
  CHECK(derive_memory_kind(ok) == MemoryKind::Scale);
}

TEST_CASE("memory kind derivation") {
  CHECK_FALSE(derive_memory_kind(small_config(StrategyKind::SingleModel, ModelKind::CAE)));
  CHECK_FALSE(derive_memory_kind(small_config(StrategyKind::FineTuning, ModelKind::CAE)));
  CHECK(derive_memory_kind(small_config(StrategyKind::ReplayHighMem, ModelKind::CAE)) ==
        MemoryKind::RawHigh);
  CHECK(derive_memory_kind(small_config(StrategyKind::ReplayLowMem, ModelKind::CAE)) ==
        MemoryKind::RawLow);
  CHECK(derive_memory_kind(small_config(StrategyKind::GenerativeReplay, ModelKind::VAE)) ==
        MemoryKind::Generative);
  CHECK(derive_memory_kind(small_config(StrategyKind::CompressedReplay, ModelKind::CAE)) ==
        MemoryKind::LatentCAE);
  CHECK(derive_memory_kind(small_config(StrategyKind::CompressedReplay, ModelKind::VAE)) ==
        MemoryKind::LatentVAE);
  CHECK(derive_memory_kind(small_config(StrategyKind::CompressedReplay, ModelKind::SRGen)) ==
        MemoryKind::Scale);
}

TEST_CASE("scale old pairs use frozen snapshot targets and leave the live model alone") {
  StrategyConfig config = small_config(StrategyKind::CompressedReplay, ModelKind::SRGen);
  TaskStream stream = generate_synthetic_stream(2, 4, 32, 3);

  ReconstructorHandle sr = build_model(ModelKind::SRGen, config.arch);
  MemoryConfig mc;
  mc.kind = MemoryKind::Scale;
  mc.working_size = 32;
  MemoryModule memory(mc);

  std::mt19937_64 rng(1);
  scale_train_task(sr, memory, stream.task(1), config, rng, nullptr);
  ModelSnapshot sr1 = snapshot(sr, 1);
  memory.store(stream.task(1).train_images, 1);

  // Capture live parameters, then generate old-task pairs.
  auto frozen_live = sr.clone();
  auto pairs = scale_old_pairs(memory, sr1, 6, 32, rng);
  REQUIRE(pairs.size() == 6);
  for (auto& [input, target] : pairs) {
    // Input is the bilinear upscale of some stored payload.
    bool matched = false;
    for (const MemoryItem& item : memory.items())
      matched |= resize_image(item.image, 32, ResizeMode::Smooth) == input;
    CHECK(matched);
    // Target is bit-identical to the frozen snapshot's view of the input.
    CHECK(target.reals() == reconstruct_with(sr1, {input})[0].reals());
  }
  // Live parameters untouched by target generation.
  auto live = sr.parameters();
  auto saved = frozen_live->parameters();
  for (std::size_t i = 0; i < live.size(); ++i) CHECK(*live[i].value == *saved[i].value);
}

TEST_CASE("degenerative rewrite only touches older tasks") {
  StrategyConfig config = small_config(StrategyKind::DegenerativeCompressedReplay, ModelKind::SRGen);
  ReconstructorHandle sr = build_model(ModelKind::SRGen, config.arch);
  MemoryConfig mc;
  mc.kind = MemoryKind::Scale;
  mc.working_size = 32;
  MemoryModule memory(mc);
  TaskStream stream = generate_synthetic_stream(2, 3, 32, 4);
  memory.store(stream.task(1).train_images, 1);
  memory.store(stream.task(2).train_images, 2);

  std::vector<std::vector<std::uint8_t>> before;
  for (const MemoryItem& item : memory.items()) before.push_back(item.image.bytes());
  degenerative_rewrite_memory(sr, memory, 2);
  for (std::size_t i = 0; i < memory.item_count(); ++i) {
    const MemoryItem& item = memory.items()[i];
    if (item.source_task == 2)
      CHECK(item.image.bytes() == before[i]);
    else
      CHECK(item.image.bytes() != before[i]);
    CHECK(item.image.height() == memory.scale_size());
  }
}

TEST_CASE("run_stream fills the lower triangle; single model stays diagonal") {
  TaskStream stream = generate_synthetic_stream(2, 4, 32, 6);

  RunResult fine = run_stream(small_config(StrategyKind::FineTuning, ModelKind::CAE), stream);
  CHECK(fine.f1_matrix.row_complete(2));
  CHECK(fine.fid_matrix.row_complete(2));
  CHECK(fine.bytes_used_after_task == std::vector<std::size_t>{0, 0});
  CHECK(fine.seconds_per_task.size() == 2);

  RunResult single = run_stream(small_config(StrategyKind::SingleModel, ModelKind::CAE), stream);
  CHECK(single.f1_matrix.get(1, 1).has_value());
  CHECK(single.f1_matrix.get(2, 2).has_value());
  CHECK_FALSE(single.f1_matrix.get(2, 1).has_value());
}

TEST_CASE("replay strategies track their memory budget") {
  TaskStream stream = generate_synthetic_stream(2, 4, 32, 6);
  StrategyConfig low = small_config(StrategyKind::ReplayLowMem, ModelKind::CAE);
  RunResult r = run_stream(low, stream);
  REQUIRE(r.pipeline.memory.has_value());
  CHECK(r.bytes_used_after_task[0] == 4u * 32 * 32 * 3);
  CHECK(r.bytes_used_after_task[1] == 8u * 32 * 32 * 3);
  CHECK(r.pipeline.memory->compression_factor() == 1.0);
}

TEST_CASE("identical config and seed reproduce matrices bit-exactly") {
  TaskStream stream = generate_synthetic_stream(2, 4, 32, 8);
  StrategyConfig config = small_config(StrategyKind::ReplayLowMem, ModelKind::VAE, 12);
  RunResult a = run_stream(config, stream);
  RunResult b = run_stream(config, stream);
  CHECK(matrix_csv(a.f1_matrix) == matrix_csv(b.f1_matrix));
  CHECK(matrix_csv(a.fid_matrix) == matrix_csv(b.fid_matrix));
}

TEST_CASE("interrupted and resumed run matches the uninterrupted one") {
  TaskStream stream = generate_synthetic_stream(3, 4, 32, 9);
  StrategyConfig config = small_config(StrategyKind::CompressedReplay, ModelKind::SRGen, 21);

  RunResult full = run_stream(config, stream);

  fs::path ckdir = fs::temp_directory_path() / "clad_resume_test";
  fs::remove_all(ckdir);
  run_stream(config, stream, ckdir, 2);  // stop after task 2 (the "interruption")
  RunResult resumed = run_stream(config, stream, ckdir);

  CHECK(matrix_csv(full.f1_matrix) == matrix_csv(resumed.f1_matrix));
  CHECK(matrix_csv(full.fid_matrix) == matrix_csv(resumed.fid_matrix));
  CHECK(full.bytes_used_after_task == resumed.bytes_used_after_task);
  fs::remove_all(ckdir);
}

TEST_CASE("run_stream rejects a stream at the wrong resolution") {
  TaskStream stream = generate_synthetic_stream(2, 2, 16, 2);
  CHECK_THROWS_AS(run_stream(small_config(StrategyKind::FineTuning, ModelKind::CAE), stream),
                  std::invalid_argument);
}
