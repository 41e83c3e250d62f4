#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clad/metrics.hpp"
#include "clad/strategy.hpp"
#include "clad/stream.hpp"

namespace clad {

// Where the task stream comes from: a procedural generator, an MVTec
// layout on disk, or a previously exported stream directory.
struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | mvtec | directory
  std::string root;
  std::vector<std::string> task_names;  // mvtec category order
  int num_tasks = 3;
  int images_per_task = 16;
  int working_size = 64;
  std::uint64_t stream_seed = 1;

  bool operator==(const DatasetSpec&) const = default;
};

TaskStream load_dataset(const DatasetSpec& spec);

struct GridEntry {
  StrategyKind strategy = StrategyKind::FineTuning;
  ModelKind ad_model = ModelKind::CAE;
  bool paired_memory_model = false;
  ModelKind memory_model = ModelKind::SRGen;

  bool operator==(const GridEntry&) const = default;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<GridEntry> grid;
  std::vector<std::uint64_t> seeds = {1};
  int epochs = 30;  // protocol allows 30 or 50
  int replay_batch_n = 8;
  std::size_t budget_bytes = 0;
  int base_channels = 16;
  int batch_size = 8;
  float learning_rate = 2e-4f;
};

ExperimentConfig parse_experiment_config(const std::filesystem::path& path);

// Raises std::invalid_argument with per-entry diagnostics; every grid
// entry must pass strategy/model compatibility before any run starts.
void validate_experiment_config(const ExperimentConfig& config);

// FNV-1a over the canonical serialized form; any field change changes it.
std::uint64_t config_hash(const ExperimentConfig& config);

StrategyConfig make_strategy_config(const ExperimentConfig& config, const GridEntry& entry,
                                    std::uint64_t seed);
std::string run_id(const GridEntry& entry, std::uint64_t seed);

// One grid cell's persisted results; every summary is recomputable from
// the stored matrices.
struct ResultBundle {
  std::string id;
  GridEntry entry;
  std::uint64_t seed = 0;
  std::uint64_t experiment_hash = 0;
  DatasetSpec dataset;

  ScoreMatrix f1_matrix;
  ScoreMatrix fid_matrix;
  double s_t = 0.0;
  ForgettingResult f_t;
  ForgettingResult fid_f_t;
  std::optional<double> compression_factor;
  std::vector<std::size_t> bytes_used_after_task;
  std::vector<double> seconds_per_task;
};

// Runs the grid cells whose index ≡ shard (mod shard_count), resuming
// any cell with checkpointed state; completed cells are skipped. Writes
// one bundle directory per cell plus a top-level manifest.
std::vector<ResultBundle> run_experiment(const ExperimentConfig& config,
                                         const std::filesystem::path& out_dir,
                                         int shard = 0, int shard_count = 1);

void save_bundle(const ResultBundle& bundle, const std::filesystem::path& dir);
ResultBundle load_bundle(const std::filesystem::path& dir);
std::vector<ResultBundle> load_bundles(const std::filesystem::path& out_dir);

enum class TableFormat { Csv, Markdown };

// One table per metric: strategies as rows, AD models as columns, cell
// text "0.34 (13.27%)" (score, forgetting as a percentage); strategies
// without a forgetting entry show "-". Refuses mixed dataset specs.
void emit_tables(const std::vector<ResultBundle>& bundles, TableFormat format,
                 const std::filesystem::path& out_dir);

// Per strategy/model series of (task index, mean of matrix row) points,
// one CSV per metric. FID series run opposite to quality: lower is
// better.
void emit_plot_data(const std::vector<ResultBundle>& bundles,
                    const std::filesystem::path& out_dir);

}  // namespace clad
