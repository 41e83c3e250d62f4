#include "clad/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace clad {

namespace fs = std::filesystem;
using json = nlohmann::json;

TaskStream load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "synthetic")
    return generate_synthetic_stream(spec.num_tasks, spec.images_per_task, spec.working_size,
                                     spec.stream_seed);
  if (spec.kind == "mvtec") {
    if (spec.root.empty()) throw std::invalid_argument("mvtec dataset needs a root path");
    if (spec.task_names.empty()) throw std::invalid_argument("mvtec dataset needs a task order");
    return load_mvtec_stream(spec.root, spec.task_names, spec.working_size);
  }
  if (spec.kind == "directory") {
    if (spec.root.empty()) throw std::invalid_argument("directory dataset needs a root path");
    return import_stream(spec.root);
  }
  throw std::invalid_argument("unknown dataset kind: " + spec.kind);
}

namespace {

json dataset_to_json(const DatasetSpec& d) {
  return json{{"kind", d.kind},
              {"root", d.root},
              {"task_names", d.task_names},
              {"num_tasks", d.num_tasks},
              {"images_per_task", d.images_per_task},
              {"working_size", d.working_size},
              {"stream_seed", d.stream_seed}};
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.kind = j.value("kind", d.kind);
  d.root = j.value("root", d.root);
  d.task_names = j.value("task_names", d.task_names);
  d.num_tasks = j.value("num_tasks", d.num_tasks);
  d.images_per_task = j.value("images_per_task", d.images_per_task);
  d.working_size = j.value("working_size", d.working_size);
  d.stream_seed = j.value("stream_seed", d.stream_seed);
  return d;
}

json entry_to_json(const GridEntry& e) {
  json j{{"strategy", to_string(e.strategy)}, {"ad_model", to_string(e.ad_model)}};
  if (e.paired_memory_model) j["memory_model"] = to_string(e.memory_model);
  return j;
}

GridEntry entry_from_json(const json& j) {
  GridEntry e;
  e.strategy = strategy_kind_from_string(j.at("strategy").get<std::string>());
  e.ad_model = model_kind_from_string(j.at("ad_model").get<std::string>());
  if (j.contains("memory_model")) {
    e.paired_memory_model = true;
    e.memory_model = model_kind_from_string(j.at("memory_model").get<std::string>());
  }
  return e;
}

json config_to_json(const ExperimentConfig& c) {
  json grid = json::array();
  for (const GridEntry& e : c.grid) grid.push_back(entry_to_json(e));
  return json{{"dataset", dataset_to_json(c.dataset)},
              {"grid", grid},
              {"seeds", c.seeds},
              {"epochs", c.epochs},
              {"replay_batch_n", c.replay_batch_n},
              {"budget_bytes", c.budget_bytes},
              {"base_channels", c.base_channels},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate}};
}

std::string format_two(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  json j = json::parse(in);

  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (!j.contains("grid")) throw std::invalid_argument("config has no grid");
  for (const json& e : j.at("grid")) c.grid.push_back(entry_from_json(e));
  c.seeds = j.value("seeds", c.seeds);
  c.epochs = j.value("epochs", c.epochs);
  c.replay_batch_n = j.value("replay_batch_n", c.replay_batch_n);
  c.budget_bytes = j.value("budget_bytes", c.budget_bytes);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  return c;
}

void validate_experiment_config(const ExperimentConfig& config) {
  if (config.grid.empty()) throw std::invalid_argument("grid is empty");
  if (config.seeds.empty()) throw std::invalid_argument("no seeds given");
  if (config.epochs != 30 && config.epochs != 50)
    throw std::invalid_argument("epochs must be 30 or 50");
  if (config.dataset.kind != "synthetic" && config.dataset.kind != "mvtec" &&
      config.dataset.kind != "directory")
    throw std::invalid_argument("unknown dataset kind: " + config.dataset.kind);

  std::vector<std::string> problems;
  for (std::size_t i = 0; i < config.grid.size(); ++i) {
    try {
      validate_strategy_config(make_strategy_config(config, config.grid[i], config.seeds[0]));
    } catch (const std::exception& e) {
      problems.push_back("grid[" + std::to_string(i) + "]: " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid grid entries:";
    for (const std::string& p : problems) msg += "\n  " + p;
    throw std::invalid_argument(msg);
  }
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string canonical = config_to_json(config).dump();
  std::uint64_t hash = 1469598103934665603ull;  // FNV-1a 64-bit
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 1099511628211ull;
  }
  return hash;
}

StrategyConfig make_strategy_config(const ExperimentConfig& config, const GridEntry& entry,
                                    std::uint64_t seed) {
  StrategyConfig s;
  s.strategy_kind = entry.strategy;
  s.ad_model_kind = entry.ad_model;
  s.paired_memory_model = entry.paired_memory_model;
  s.memory_model_kind = entry.memory_model;
  s.budget_bytes = config.budget_bytes;
  s.replay_batch_n = config.replay_batch_n;
  s.epochs = config.epochs;
  s.seed = seed;
  s.arch.working_size = config.dataset.working_size;
  s.arch.base_channels = config.base_channels;
  s.arch.batch_size = config.batch_size;
  s.arch.learning_rate = config.learning_rate;
  s.arch.epochs = config.epochs;
  s.arch.seed = seed;
  return s;
}

std::string run_id(const GridEntry& entry, std::uint64_t seed) {
  std::string id = to_string(entry.strategy) + "_" + to_string(entry.ad_model);
  if (entry.paired_memory_model) id += "_mem_" + to_string(entry.memory_model);
  return id + "_s" + std::to_string(seed);
}

void save_bundle(const ResultBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream f1(dir / "f1.csv");
    bundle.f1_matrix.to_csv(f1);
    std::ofstream fid_out(dir / "fid.csv");
    bundle.fid_matrix.to_csv(fid_out);
  }

  json summary;
  summary["id"] = bundle.id;
  summary["entry"] = entry_to_json(bundle.entry);
  summary["seed"] = bundle.seed;
  summary["experiment_hash"] = bundle.experiment_hash;
  summary["dataset"] = dataset_to_json(bundle.dataset);
  summary["feature_extractor"] = PatchStatsExtractor().config_name();
  summary["s_t"] = bundle.s_t;
  summary["f_t"] = bundle.f_t.value;
  summary["f_t_skipped_tasks"] = bundle.f_t.skipped_tasks;
  summary["fid_f_t"] = bundle.fid_f_t.value;
  summary["fid_f_t_skipped_tasks"] = bundle.fid_f_t.skipped_tasks;
  if (bundle.compression_factor) summary["compression_factor"] = *bundle.compression_factor;
  summary["bytes_used_after_task"] = bundle.bytes_used_after_task;
  summary["seconds_per_task"] = bundle.seconds_per_task;
  std::ofstream out(dir / "summary.json");
  out << summary.dump(2) << "\n";
}

ResultBundle load_bundle(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw std::runtime_error("no summary.json in " + dir.string());
  json summary = json::parse(in);

  ResultBundle b;
  b.id = summary.at("id").get<std::string>();
  b.entry = entry_from_json(summary.at("entry"));
  b.seed = summary.at("seed").get<std::uint64_t>();
  b.experiment_hash = summary.at("experiment_hash").get<std::uint64_t>();
  b.dataset = dataset_from_json(summary.at("dataset"));
  b.s_t = summary.at("s_t").get<double>();
  b.f_t.value = summary.at("f_t").get<double>();
  b.f_t.skipped_tasks = summary.at("f_t_skipped_tasks").get<std::vector<int>>();
  b.fid_f_t.value = summary.at("fid_f_t").get<double>();
  b.fid_f_t.skipped_tasks = summary.at("fid_f_t_skipped_tasks").get<std::vector<int>>();
  if (summary.contains("compression_factor"))
    b.compression_factor = summary.at("compression_factor").get<double>();
  b.bytes_used_after_task = summary.at("bytes_used_after_task").get<std::vector<std::size_t>>();
  b.seconds_per_task = summary.at("seconds_per_task").get<std::vector<double>>();

  std::ifstream f1(dir / "f1.csv");
  b.f1_matrix = ScoreMatrix::from_csv(f1, "pixel_f1");
  std::ifstream fid_in(dir / "fid.csv");
  b.fid_matrix = ScoreMatrix::from_csv(fid_in, "fid");
  return b;
}

std::vector<ResultBundle> load_bundles(const fs::path& out_dir) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(out_dir))
    if (e.is_directory() && fs::exists(e.path() / "summary.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<ResultBundle> bundles;
  for (const fs::path& d : dirs) bundles.push_back(load_bundle(d));
  return bundles;
}

std::vector<ResultBundle> run_experiment(const ExperimentConfig& config, const fs::path& out_dir,
                                         int shard, int shard_count) {
  validate_experiment_config(config);
  if (shard_count < 1 || shard < 0 || shard >= shard_count)
    throw std::invalid_argument("bad shard arguments");
  fs::create_directories(out_dir);

  const std::uint64_t hash = config_hash(config);
  {
    json manifest;
    manifest["config"] = config_to_json(config);
    manifest["config_hash"] = hash;
    std::ofstream out(out_dir / "manifest.json");
    out << manifest.dump(2) << "\n";
  }

  TaskStream stream = load_dataset(config.dataset);
  const int total = stream.total_tasks();

  std::vector<ResultBundle> bundles;
  int cell = 0;
  for (const GridEntry& entry : config.grid) {
    for (std::uint64_t seed : config.seeds) {
      const int index = cell++;
      if (index % shard_count != shard) continue;
      const fs::path run_dir = out_dir / run_id(entry, seed);
      if (fs::exists(run_dir / "summary.json")) {  // completed cell, skip
        bundles.push_back(load_bundle(run_dir));
        continue;
      }

      StrategyConfig sc = make_strategy_config(config, entry, seed);
      RunResult run = run_stream(sc, stream, run_dir / "checkpoint");

      ResultBundle b;
      b.id = run_id(entry, seed);
      b.entry = entry;
      b.seed = seed;
      b.experiment_hash = hash;
      b.dataset = config.dataset;
      b.f1_matrix = std::move(run.f1_matrix);
      b.fid_matrix = std::move(run.fid_matrix);
      b.s_t = average_score(b.f1_matrix, total);
      if (entry.strategy != StrategyKind::SingleModel && total > 1) {
        b.f_t = average_forgetting(b.f1_matrix, total);
        b.fid_f_t = fid_forgetting(b.fid_matrix, total);
      }
      if (run.pipeline.memory && run.pipeline.memory->kind() != MemoryKind::Generative)
        b.compression_factor = run.pipeline.memory->compression_factor();
      b.bytes_used_after_task = std::move(run.bytes_used_after_task);
      b.seconds_per_task = std::move(run.seconds_per_task);

      save_bundle(b, run_dir);
      bundles.push_back(std::move(b));
    }
  }
  return bundles;
}

namespace {

struct TableKey {
  StrategyKind strategy;
  bool paired;
  ModelKind memory_model;

  bool operator<(const TableKey& o) const {
    return std::tie(strategy, paired, memory_model) <
           std::tie(o.strategy, o.paired, o.memory_model);
  }
};

std::string row_label(const TableKey& k) {
  std::string label = to_string(k.strategy);
  if (k.paired) label += " (" + to_string(k.memory_model) + " memory)";
  return label;
}

// Seeds for one cell are aggregated by their median, the same statistic
// the directional acceptance checks use.
double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_same_dataset(const std::vector<ResultBundle>& bundles) {
  for (const ResultBundle& b : bundles)
    if (!(b.dataset == bundles.front().dataset))
      throw std::invalid_argument("bundles mix different dataset specs");
}

void write_table(const std::vector<ResultBundle>& bundles, TableFormat format,
                 const fs::path& path, bool fid_metric) {
  std::set<ModelKind> model_set;
  std::map<TableKey, std::map<ModelKind, std::pair<std::vector<double>, std::vector<double>>>>
      cells;  // row -> model -> (scores, forgettings)
  for (const ResultBundle& b : bundles) {
    model_set.insert(b.entry.ad_model);
    TableKey key{b.entry.strategy, b.entry.paired_memory_model, b.entry.memory_model};
    auto& [scores, forgettings] = cells[key][b.entry.ad_model];
    const ScoreMatrix& m = fid_metric ? b.fid_matrix : b.f1_matrix;
    scores.push_back(m.row_mean(m.total_tasks()));
    if (b.entry.strategy != StrategyKind::SingleModel)
      forgettings.push_back(fid_metric ? b.fid_f_t.value : b.f_t.value);
  }

  std::ofstream out(path);
  const char* sep = format == TableFormat::Csv ? "," : " | ";
  auto emit_row = [&](const std::vector<std::string>& row) {
    if (format == TableFormat::Markdown) out << "| ";
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? sep : "") << row[i];
    if (format == TableFormat::Markdown) out << " |";
    out << "\n";
  };

  std::vector<std::string> header{"strategy"};
  for (ModelKind m : model_set) header.push_back(to_string(m));
  emit_row(header);
  if (format == TableFormat::Markdown) {
    std::vector<std::string> rule(header.size(), "---");
    emit_row(rule);
  }

  for (const auto& [key, models] : cells) {
    std::vector<std::string> row{row_label(key)};
    for (ModelKind m : model_set) {
      auto it = models.find(m);
      if (it == models.end()) {
        row.push_back("-");
        continue;
      }
      const auto& [scores, forgettings] = it->second;
      std::string cell_text = format_two(median(scores));
      cell_text += forgettings.empty() ? " (-)"
                                       : " (" + format_two(100.0 * median(forgettings)) + "%)";
      row.push_back(cell_text);
    }
    emit_row(row);
  }
}

}  // namespace

void emit_tables(const std::vector<ResultBundle>& bundles, TableFormat format,
                 const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const char* ext = format == TableFormat::Csv ? ".csv" : ".md";
  if (bundles.empty()) {
    // Header-only tables so downstream tooling still has the files.
    std::ofstream f1(out_dir / (std::string("table_f1") + ext));
    f1 << (format == TableFormat::Csv ? "strategy\n" : "| strategy |\n| --- |\n");
    std::ofstream fid_out(out_dir / (std::string("table_fid") + ext));
    fid_out << (format == TableFormat::Csv ? "strategy\n" : "| strategy |\n| --- |\n");
    return;
  }
  check_same_dataset(bundles);
  write_table(bundles, format, out_dir / (std::string("table_f1") + ext), false);
  write_table(bundles, format, out_dir / (std::string("table_fid") + ext), true);
}

void emit_plot_data(const std::vector<ResultBundle>& bundles, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  if (!bundles.empty()) check_same_dataset(bundles);

  for (bool fid_metric : {false, true}) {
    std::ofstream out(out_dir / (fid_metric ? "plot_fid.csv" : "plot_f1.csv"));
    out << "run,strategy,ad_model,seed,task,value\n";
    for (const ResultBundle& b : bundles) {
      const ScoreMatrix& m = fid_metric ? b.fid_matrix : b.f1_matrix;
      for (int i = 1; i <= m.rows_filled(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9f", m.row_mean(i));
        out << b.id << "," << to_string(b.entry.strategy) << "," << to_string(b.entry.ad_model)
            << "," << b.seed << "," << i << "," << buf << "\n";
      }
    }
  }
}

}  // namespace clad
