// Batch experiment runner: validates declarative grid configs, executes
// or resumes them, and emits summary tables and plot data.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "clad/experiment.hpp"

namespace {

clad::ExperimentConfig load_config(const std::string& config_path, std::uint64_t* seed_override,
                                   int* epochs_override) {
  clad::ExperimentConfig config = clad::parse_experiment_config(config_path);
  if (const char* root = std::getenv("CLAD_DATASET_ROOT"); root && *root)
    config.dataset.root = root;
  if (seed_override) config.seeds = {*seed_override};
  if (epochs_override) config.epochs = *epochs_override;
  return config;
}

// Grid cells are share-nothing, so --parallel shards them across child
// processes; each child runs its share sequentially.
int run_sharded(const clad::ExperimentConfig& config, const std::string& out_dir, int parallel) {
  if (parallel <= 1) {
    clad::run_experiment(config, out_dir);
    return 0;
  }
  std::vector<pid_t> children;
  for (int shard = 0; shard < parallel; ++shard) {
    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      try {
        clad::run_experiment(config, out_dir, shard, parallel);
        _exit(0);
      } catch (const std::exception& e) {
        std::cerr << "shard " << shard << ": " << e.what() << "\n";
        _exit(1);
      }
    }
    children.push_back(pid);
  }
  int status = 0, rc = 0;
  for (pid_t pid : children) {
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) rc = 1;
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual-learning anomaly-detection experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, format = "csv";
  std::uint64_t seed = 0;
  int epochs = 0, parallel = 1;
  bool have_seed = false, have_epochs = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config, bool needs_out) {
    if (needs_config)
      cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    auto* out = cmd->add_option("--out", out_dir, "output directory");
    if (needs_out) out->required();
    cmd->add_option("--seed", seed, "override: run this single seed")
        ->each([&](const std::string&) { have_seed = true; });
    cmd->add_option("--epochs", epochs, "override epoch count")
        ->check(CLI::IsMember({30, 50}))
        ->each([&](const std::string&) { have_epochs = true; });
  };

  CLI::App* run_cmd = app.add_subcommand("run", "execute the experiment grid");
  add_common(run_cmd, true, true);
  run_cmd->add_option("--parallel", parallel, "shard grid cells across K processes")
      ->check(CLI::PositiveNumber);

  CLI::App* resume_cmd = app.add_subcommand("resume", "continue an interrupted run");
  add_common(resume_cmd, true, true);
  resume_cmd->add_option("--parallel", parallel, "shard grid cells across K processes")
      ->check(CLI::PositiveNumber);

  CLI::App* tables_cmd = app.add_subcommand("tables", "emit summary tables from bundles");
  tables_cmd->add_option("--config", config_path, "experiment config (accepted for symmetry)");
  tables_cmd->add_option("--out", out_dir, "directory holding result bundles")->required();
  tables_cmd->add_option("--format", format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));

  CLI::App* plots_cmd = app.add_subcommand("plots", "emit line-plot data from bundles");
  plots_cmd->add_option("--config", config_path, "experiment config (accepted for symmetry)");
  plots_cmd->add_option("--out", out_dir, "directory holding result bundles")->required();

  CLI::App* validate_cmd = app.add_subcommand("validate", "check a config without running");
  add_common(validate_cmd, true, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(run_cmd) || app.got_subcommand(resume_cmd)) {
      if (app.got_subcommand(resume_cmd) && !std::filesystem::exists(out_dir)) {
        std::cerr << "nothing to resume: " << out_dir << " does not exist\n";
        return 1;
      }
      clad::ExperimentConfig config = load_config(config_path, have_seed ? &seed : nullptr,
                                                  have_epochs ? &epochs : nullptr);
      clad::validate_experiment_config(config);
      return run_sharded(config, out_dir, parallel);
    }
    if (app.got_subcommand(tables_cmd)) {
      auto bundles = clad::load_bundles(out_dir);
      clad::emit_tables(bundles,
                        format == "csv" ? clad::TableFormat::Csv : clad::TableFormat::Markdown,
                        out_dir);
      return 0;
    }
    if (app.got_subcommand(plots_cmd)) {
      clad::emit_plot_data(clad::load_bundles(out_dir), out_dir);
      return 0;
    }
    if (app.got_subcommand(validate_cmd)) {
      clad::ExperimentConfig config = load_config(config_path, have_seed ? &seed : nullptr,
                                                  have_epochs ? &epochs : nullptr);
      clad::validate_experiment_config(config);
      std::cout << "config ok: " << config.grid.size() << " grid entries x "
                << config.seeds.size() << " seeds, hash " << clad::config_hash(config) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
