#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>

#include "clad/memory.hpp"
#include "clad/metrics.hpp"
#include "clad/model.hpp"
#include "clad/scoring.hpp"
#include "clad/stream.hpp"

namespace clad {

enum class StrategyKind {
  SingleModel,
  FineTuning,
  ReplayHighMem,
  ReplayLowMem,
  CompressedReplay,
  DegenerativeCompressedReplay,
  GenerativeReplay,
};

std::string to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& name);

struct StrategyConfig {
  StrategyKind strategy_kind = StrategyKind::FineTuning;
  ModelKind ad_model_kind = ModelKind::CAE;
  ArchitectureConfig arch;

  // Replay memory; budget_bytes == 0 selects the 40-raw-image default.
  std::size_t budget_bytes = 0;
  int replay_batch_n = 8;  // images per side of a mixed batch
  int epochs = 30;
  std::uint64_t seed = 0;

  // Two-model pipelines: an SR memory module paired with a separate AD
  // model (e.g., SCALE + Inpaint). When false, one model fills both roles.
  bool paired_memory_model = false;
  ModelKind memory_model_kind = ModelKind::SRGen;

  int threshold_grid = 101;
  int inpaint_patch = 32;
  int inpaint_passes = 3;
  int fid_feature_grid = 4;
};

// Raises std::invalid_argument for incompatible strategy/model pairs
// before any training happens.
void validate_strategy_config(const StrategyConfig& config);

// Derives the memory kind implied by strategy + model pairing.
std::optional<MemoryKind> derive_memory_kind(const StrategyConfig& config);

StrategyConfig pair_memory_with_ad(ModelKind memory_model_kind, ModelKind ad_model_kind,
                                   const StrategyConfig& base);

struct TrainedPipeline {
  std::unique_ptr<ReconstructorHandle> ad_model;
  std::unique_ptr<ReconstructorHandle> memory_model;  // paired pipelines only
  std::optional<MemoryModule> memory;
  std::optional<ModelSnapshot> sr_snapshot;  // latest SR_i, SCALE only
};

struct RunResult {
  TrainedPipeline pipeline;
  ScoreMatrix f1_matrix;
  ScoreMatrix fid_matrix;
  std::vector<std::size_t> bytes_used_after_task;
  std::vector<double> seconds_per_task;
};

// Trains over the stream in task order; after task i fills row i of both
// matrices (diagonal only for Single Model). When checkpoint_dir is
// nonempty, per-task state is persisted there and an interrupted run
// resumes deterministically.
RunResult run_stream(const StrategyConfig& config, const TaskStream& stream,
                     const std::filesystem::path& checkpoint_dir = {}, int stop_after_task = 0);

// Exposed for tests: one task's training loop with replay mixing.
void train_task_with_replay(ReconstructorHandle& ad_model, MemoryModule* memory,
                            const TaskData& task, const StrategyConfig& config,
                            std::mt19937_64& rng, ModelContext retrieve_ctx);

// SCALE task step (Fig-style three-step procedure): current pairs are
// (blurry upscale, original); old pairs are (upscaled stored item,
// previous-snapshot reconstruction of it). Snapshot + store at task end
// are the caller's responsibility.
void scale_train_task(ReconstructorHandle& sr_model, MemoryModule& memory, const TaskData& task,
                      const StrategyConfig& config, std::mt19937_64& rng,
                      const ModelSnapshot* previous_snapshot);

// The old-task half of a SCALE batch: (upscaled stored item, frozen
// previous-snapshot reconstruction of it) pairs. Exposed so tests can
// check the targets bit-for-bit.
std::vector<std::pair<ImageTensor, ImageTensor>> scale_old_pairs(
    const MemoryModule& memory, const ModelSnapshot& previous_snapshot, int n, int working_size,
    std::mt19937_64& rng);

// Degenerative variant: after training, stored old-task items are
// re-compressed through the just-trained model so perturbation
// accumulates.
void degenerative_rewrite_memory(ReconstructorHandle& sr_model, MemoryModule& memory,
                                 int current_task);

// Shared evaluation helpers (also used by the acceptance suite).
double evaluate_task_f1(ReconstructorHandle& ad_model, const TaskData& task,
                        const StrategyConfig& config);
double evaluate_task_fid(ReconstructorHandle& model, const TaskData& task,
                         const StrategyConfig& config);

ImageTensor blur_downscale_upscale(const ImageTensor& image, int low_size, int working_size);

}  // namespace clad
