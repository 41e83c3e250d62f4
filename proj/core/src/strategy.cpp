#include "clad/strategy.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace clad {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::SingleModel: return "single_model";
    case StrategyKind::FineTuning: return "fine_tuning";
    case StrategyKind::ReplayHighMem: return "replay_high_mem";
    case StrategyKind::ReplayLowMem: return "replay_low_mem";
    case StrategyKind::CompressedReplay: return "compressed_replay";
    case StrategyKind::DegenerativeCompressedReplay: return "degenerative_compressed_replay";
    case StrategyKind::GenerativeReplay: return "generative_replay";
  }
  throw std::logic_error("unknown strategy kind");
}

StrategyKind strategy_kind_from_string(const std::string& name) {
  if (name == "single_model") return StrategyKind::SingleModel;
  if (name == "fine_tuning") return StrategyKind::FineTuning;
  if (name == "replay_high_mem") return StrategyKind::ReplayHighMem;
  if (name == "replay_low_mem") return StrategyKind::ReplayLowMem;
  if (name == "compressed_replay") return StrategyKind::CompressedReplay;
  if (name == "degenerative_compressed_replay") return StrategyKind::DegenerativeCompressedReplay;
  if (name == "generative_replay") return StrategyKind::GenerativeReplay;
  throw std::invalid_argument("unknown strategy kind: " + name);
}

namespace {

bool is_compressed(StrategyKind k) {
  return k == StrategyKind::CompressedReplay || k == StrategyKind::DegenerativeCompressedReplay;
}

// The model whose encoder/downscaler defines the stored representation.
ModelKind memory_role_kind(const StrategyConfig& c) {
  return c.paired_memory_model ? c.memory_model_kind : c.ad_model_kind;
}

// Converts plain images into the (input, target) pairs a model kind
// trains on: identity for autoencoders, degraded input for generators.
void append_pairs(ModelKind kind, const std::vector<ImageTensor>& images,
                  const StrategyConfig& config, std::mt19937_64& rng,
                  std::vector<ImageTensor>& inputs, std::vector<ImageTensor>& targets) {
  const int working = config.arch.working_size;
  for (const ImageTensor& img : images) {
    switch (kind) {
      case ModelKind::CAE:
      case ModelKind::VAE:
        inputs.push_back(img);
        break;
      case ModelKind::SRGen:
        inputs.push_back(blur_downscale_upscale(img, working / 8, working));
        break;
      case ModelKind::InpaintGen: {
        MaskSet set = build_mask_set(img.height(), img.width(), config.inpaint_patch, 1, rng());
        const PixelMask& mask = set.masks[rng() % set.masks.size()];
        ImageTensor unit = img.to_unit();
        std::vector<float> vals = unit.reals();
        for (int y = 0; y < unit.height(); ++y)
          for (int x = 0; x < unit.width(); ++x)
            if (mask.at(y, x))
              for (int c = 0; c < 3; ++c) vals[unit.index(y, x, c)] = 0.5f;
        inputs.push_back(ImageTensor::from_unit(unit.height(), unit.width(), std::move(vals)));
        break;
      }
    }
    targets.push_back(img);
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<ImageTensor> reconstruct_batched(ReconstructorHandle& model,
                                             const std::vector<ImageTensor>& images,
                                             int batch_size) {
  std::vector<ImageTensor> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    std::size_t stop = std::min(images.size(), start + batch_size);
    std::vector<ImageTensor> chunk(images.begin() + start, images.begin() + stop);
    for (ImageTensor& r : model.reconstruct(chunk)) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void validate_strategy_config(const StrategyConfig& config) {
  if (config.replay_batch_n < 1) throw std::invalid_argument("replay_batch_n must be >= 1");
  if (config.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (config.arch.working_size < 32 || config.arch.working_size % 8 != 0)
    throw std::invalid_argument("working_size must be >= 32 and divisible by 8");

  if (config.paired_memory_model && !is_compressed(config.strategy_kind))
    throw std::invalid_argument("a paired memory model requires a compressed replay strategy");

  if (config.strategy_kind == StrategyKind::GenerativeReplay &&
      config.ad_model_kind != ModelKind::VAE)
    throw std::invalid_argument("generative replay needs a VAE");

  if (is_compressed(config.strategy_kind)) {
    ModelKind role = memory_role_kind(config);
    if (role == ModelKind::InpaintGen)
      throw std::invalid_argument(
          "inpainting models cannot compress a memory; pair them with a CAE, VAE or SR memory");
    if (config.strategy_kind == StrategyKind::DegenerativeCompressedReplay &&
        role != ModelKind::SRGen)
      throw std::invalid_argument("the degenerative variant is defined for SR memories only");
  }
}

std::optional<MemoryKind> derive_memory_kind(const StrategyConfig& config) {
  switch (config.strategy_kind) {
    case StrategyKind::SingleModel:
    case StrategyKind::FineTuning:
      return std::nullopt;
    case StrategyKind::ReplayHighMem:
      return MemoryKind::RawHigh;
    case StrategyKind::ReplayLowMem:
      return MemoryKind::RawLow;
    case StrategyKind::GenerativeReplay:
      return MemoryKind::Generative;
    case StrategyKind::CompressedReplay:
    case StrategyKind::DegenerativeCompressedReplay:
      switch (memory_role_kind(config)) {
        case ModelKind::CAE: return MemoryKind::LatentCAE;
        case ModelKind::VAE: return MemoryKind::LatentVAE;
        case ModelKind::SRGen: return MemoryKind::Scale;
        case ModelKind::InpaintGen:
          throw std::invalid_argument("inpainting models cannot compress a memory");
      }
  }
  throw std::logic_error("unknown strategy kind");
}

StrategyConfig pair_memory_with_ad(ModelKind memory_model_kind, ModelKind ad_model_kind,
                                   const StrategyConfig& base) {
  StrategyConfig out = base;
  if (!is_compressed(out.strategy_kind)) out.strategy_kind = StrategyKind::CompressedReplay;
  out.paired_memory_model = true;
  out.memory_model_kind = memory_model_kind;
  out.ad_model_kind = ad_model_kind;
  validate_strategy_config(out);
  return out;
}

void train_task_with_replay(ReconstructorHandle& ad_model, MemoryModule* memory,
                            const TaskData& task, const StrategyConfig& config,
                            std::mt19937_64& rng, ModelContext retrieve_ctx) {
  const std::size_t n = static_cast<std::size_t>(config.replay_batch_n);
  const auto& images = task.train_images;
  if (images.empty()) throw std::invalid_argument("task has no training images");

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = shuffled_indices(images.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += n) {
      std::size_t stop = std::min(order.size(), start + n);
      std::vector<ImageTensor> current;
      for (std::size_t k = start; k < stop; ++k) current.push_back(images[order[k]]);

      std::vector<ImageTensor> inputs, targets;
      append_pairs(ad_model.kind(), current, config, rng, inputs, targets);

      // Replay side: empty on the first task, so the batch stays pure.
      if (memory != nullptr && task.task_id > 1) {
        std::vector<ImageTensor> old = memory->retrieve(static_cast<int>(n), retrieve_ctx);
        append_pairs(ad_model.kind(), old, config, rng, inputs, targets);
      }
      train_step(ad_model, inputs, targets);
    }
  }
}

void scale_train_task(ReconstructorHandle& sr_model, MemoryModule& memory, const TaskData& task,
                      const StrategyConfig& config, std::mt19937_64& rng,
                      const ModelSnapshot* previous_snapshot) {
  const int working = config.arch.working_size;
  const int low = memory.scale_size();
  const std::size_t n = static_cast<std::size_t>(config.replay_batch_n);
  const auto& images = task.train_images;
  if (images.empty()) throw std::invalid_argument("task has no training images");

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = shuffled_indices(images.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += n) {
      std::size_t stop = std::min(order.size(), start + n);
      std::vector<ImageTensor> inputs, targets;
      for (std::size_t k = start; k < stop; ++k) {
        const ImageTensor& img = images[order[k]];
        inputs.push_back(blur_downscale_upscale(img, low, working));
        targets.push_back(img);
      }

      // Old pairs: upscaled stored items, supervised by the frozen
      // previous-task model's view of them.
      if (previous_snapshot != nullptr && memory.item_count() > 0) {
        for (auto& [input, target] :
             scale_old_pairs(memory, *previous_snapshot, static_cast<int>(n), working, rng)) {
          inputs.push_back(std::move(input));
          targets.push_back(std::move(target));
        }
      }
      train_step(sr_model, inputs, targets);
    }
  }
}

std::vector<std::pair<ImageTensor, ImageTensor>> scale_old_pairs(
    const MemoryModule& memory, const ModelSnapshot& previous_snapshot, int n, int working_size,
    std::mt19937_64& rng) {
  if (memory.item_count() == 0) return {};
  std::vector<ImageTensor> ups;
  for (int k = 0; k < n; ++k) {
    const MemoryItem& item = memory.items()[rng() % memory.item_count()];
    ups.push_back(resize_image(item.image, working_size, ResizeMode::Smooth));
  }
  std::vector<ImageTensor> targets = reconstruct_with(previous_snapshot, ups);
  std::vector<std::pair<ImageTensor, ImageTensor>> pairs;
  for (std::size_t k = 0; k < ups.size(); ++k)
    pairs.emplace_back(std::move(ups[k]), std::move(targets[k]));
  return pairs;
}

void degenerative_rewrite_memory(ReconstructorHandle& sr_model, MemoryModule& memory,
                                 int current_task) {
  const int working = sr_model.config().working_size;
  const int low = memory.scale_size();
  for (MemoryItem& item : memory.mutable_items()) {
    if (item.source_task >= current_task) continue;
    ImageTensor up = resize_image(item.image, working, ResizeMode::Smooth);
    ImageTensor recon = sr_model.reconstruct({up})[0];
    item.image = resize_image(recon.to_u8(), low, ResizeMode::Smooth);
  }
  memory.refresh_bytes_used();
}

double evaluate_task_f1(ReconstructorHandle& ad_model, const TaskData& task,
                        const StrategyConfig& config) {
  if (task.test_images.empty()) throw std::invalid_argument("task has no test images");
  std::vector<AnomalyMap> maps;
  std::vector<PixelMask> gts;
  std::optional<MaskSet> mask_set;
  if (ad_model.kind() == ModelKind::InpaintGen) {
    const ImageTensor& first = task.test_images.front().first;
    mask_set = build_mask_set(first.height(), first.width(), config.inpaint_patch,
                              config.inpaint_passes,
                              config.seed * 1000003 + static_cast<std::uint64_t>(task.task_id));
  }
  for (const auto& [img, gt] : task.test_images) {
    maps.push_back(mask_set ? inpaint_anomaly_map(ad_model, img, *mask_set)
                            : reconstruction_anomaly_map(ad_model, img));
    gts.push_back(gt);
  }
  return best_f1_threshold(maps, gts, config.threshold_grid).f1;
}

double evaluate_task_fid(ReconstructorHandle& model, const TaskData& task,
                         const StrategyConfig& config) {
  if (task.test_images.size() < 2)
    throw std::invalid_argument("FID needs at least two test images");
  const int working = config.arch.working_size;

  std::vector<ImageTensor> real, gen;
  for (const auto& [img, gt] : task.test_images) real.push_back(img);

  switch (model.kind()) {
    case ModelKind::CAE:
    case ModelKind::VAE:
      gen = reconstruct_batched(model, real, config.arch.batch_size);
      break;
    case ModelKind::SRGen: {
      std::vector<ImageTensor> degraded;
      for (const ImageTensor& img : real)
        degraded.push_back(blur_downscale_upscale(img, working / 8, working));
      gen = reconstruct_batched(model, degraded, config.arch.batch_size);
      break;
    }
    case ModelKind::InpaintGen: {
      const ImageTensor& first = real.front();
      MaskSet set = build_mask_set(first.height(), first.width(), config.inpaint_patch,
                                   config.inpaint_passes,
                                   config.seed * 1000003 + static_cast<std::uint64_t>(task.task_id));
      for (const ImageTensor& img : real) gen.push_back(inpaint_reconstruct(model, img, set));
      break;
    }
  }

  PatchStatsExtractor extractor(config.fid_feature_grid);
  return fid(extract_features(real, extractor), extract_features(gen, extractor));
}

ImageTensor blur_downscale_upscale(const ImageTensor& image, int low_size, int working_size) {
  return resize_image(resize_image(image, low_size, ResizeMode::Smooth), working_size,
                      ResizeMode::Smooth);
}

namespace {

void save_run_state(const fs::path& dir, const RunResult& r, int completed,
                    const std::mt19937_64& rng, const StrategyConfig& config) {
  fs::create_directories(dir);
  {
    std::ofstream f1(dir / "f1.csv");
    r.f1_matrix.to_csv(f1);
    std::ofstream fid_out(dir / "fid.csv");
    r.fid_matrix.to_csv(fid_out);
  }
  if (r.pipeline.ad_model) save_checkpoint(*r.pipeline.ad_model, (dir / "ad_model.ckpt").string());
  if (r.pipeline.memory_model)
    save_checkpoint(*r.pipeline.memory_model, (dir / "memory_model.ckpt").string());
  if (r.pipeline.sr_snapshot)
    save_checkpoint(*r.pipeline.sr_snapshot->model, (dir / "snapshot.ckpt").string());
  if (r.pipeline.memory) r.pipeline.memory->save(dir / "memory");

  std::ostringstream rng_state;
  rng_state << rng;
  json state;
  state["strategy"] = to_string(config.strategy_kind);
  state["completed_tasks"] = completed;
  state["rng_state"] = rng_state.str();
  state["bytes_used_after_task"] = r.bytes_used_after_task;
  state["seconds_per_task"] = r.seconds_per_task;
  state["snapshot_task"] = r.pipeline.sr_snapshot ? r.pipeline.sr_snapshot->task_index : 0;
  std::ofstream out(dir / "state.json");
  out << state.dump(2) << "\n";
}

int load_run_state(const fs::path& dir, RunResult& r, std::mt19937_64& rng,
                   const StrategyConfig& config) {
  std::ifstream in(dir / "state.json");
  json state = json::parse(in);
  if (state.at("strategy").get<std::string>() != to_string(config.strategy_kind))
    throw std::runtime_error("checkpoint directory belongs to a different strategy");
  int completed = state.at("completed_tasks").get<int>();

  std::istringstream rng_state(state.at("rng_state").get<std::string>());
  rng_state >> rng;
  r.bytes_used_after_task = state.at("bytes_used_after_task").get<std::vector<std::size_t>>();
  r.seconds_per_task = state.at("seconds_per_task").get<std::vector<double>>();

  {
    std::ifstream f1(dir / "f1.csv");
    r.f1_matrix = ScoreMatrix::from_csv(f1, "pixel_f1");
    std::ifstream fid_in(dir / "fid.csv");
    r.fid_matrix = ScoreMatrix::from_csv(fid_in, "fid");
  }
  if (fs::exists(dir / "ad_model.ckpt"))
    r.pipeline.ad_model =
        std::make_unique<ReconstructorHandle>(load_checkpoint((dir / "ad_model.ckpt").string()));
  if (fs::exists(dir / "memory_model.ckpt"))
    r.pipeline.memory_model = std::make_unique<ReconstructorHandle>(
        load_checkpoint((dir / "memory_model.ckpt").string()));
  if (fs::exists(dir / "memory")) r.pipeline.memory.emplace(MemoryModule::load(dir / "memory"));
  int snapshot_task = state.at("snapshot_task").get<int>();
  if (snapshot_task > 0 && fs::exists(dir / "snapshot.ckpt")) {
    r.pipeline.sr_snapshot = ModelSnapshot{
        snapshot_task, std::make_shared<ReconstructorHandle>(
                           load_checkpoint((dir / "snapshot.ckpt").string()))};
  }
  return completed;
}

}  // namespace

RunResult run_stream(const StrategyConfig& config, const TaskStream& stream,
                     const fs::path& checkpoint_dir, int stop_after_task) {
  validate_strategy_config(config);
  stream.validate();
  const int total = stream.total_tasks();
  if (total == 0) throw std::invalid_argument("empty task stream");
  {
    const ImageTensor& probe = stream.task(1).train_images.at(0);
    if (probe.height() != config.arch.working_size || probe.width() != config.arch.working_size)
      throw std::invalid_argument("stream resolution does not match working_size");
  }

  RunResult result;
  result.f1_matrix = ScoreMatrix("pixel_f1", total);
  result.fid_matrix = ScoreMatrix("fid", total);
  TrainedPipeline& pipe = result.pipeline;

  std::mt19937_64 rng(config.seed);
  ArchitectureConfig arch = config.arch;
  arch.epochs = config.epochs;
  arch.seed = config.seed;

  int start_task = 1;
  if (!checkpoint_dir.empty() && fs::exists(checkpoint_dir / "state.json")) {
    start_task = load_run_state(checkpoint_dir, result, rng, config) + 1;
  } else {
    if (auto kind = derive_memory_kind(config)) {
      MemoryConfig mc;
      mc.kind = *kind;
      mc.working_size = config.arch.working_size;
      mc.budget_bytes = config.budget_bytes;
      mc.seed = config.seed + 1000003;
      pipe.memory.emplace(MemoryModule(mc));
    }
    if (config.strategy_kind != StrategyKind::SingleModel)
      pipe.ad_model = std::make_unique<ReconstructorHandle>(build_model(config.ad_model_kind, arch));
    if (config.paired_memory_model) {
      ArchitectureConfig mem_arch = arch;
      mem_arch.seed = config.seed + 500009;
      pipe.memory_model =
          std::make_unique<ReconstructorHandle>(build_model(config.memory_model_kind, mem_arch));
    }
  }

  const int last_task = stop_after_task > 0 ? std::min(stop_after_task, total) : total;
  for (int i = start_task; i <= last_task; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    const TaskData& task = stream.task(i);
    ReconstructorHandle* mem_model =
        config.paired_memory_model ? pipe.memory_model.get() : pipe.ad_model.get();

    ModelContext ctx;
    const ModelSnapshot* prev_snapshot = pipe.sr_snapshot ? &*pipe.sr_snapshot : nullptr;
    if (pipe.memory) {
      ctx.model = mem_model;
      if (pipe.memory->kind() == MemoryKind::Scale) ctx.sr_snapshot = prev_snapshot;
    }

    switch (config.strategy_kind) {
      case StrategyKind::SingleModel: {
        ArchitectureConfig fresh = arch;
        fresh.seed = config.seed + static_cast<std::uint64_t>(i);
        pipe.ad_model =
            std::make_unique<ReconstructorHandle>(build_model(config.ad_model_kind, fresh));
        train_task_with_replay(*pipe.ad_model, nullptr, task, config, rng, {});
        break;
      }
      case StrategyKind::FineTuning:
        train_task_with_replay(*pipe.ad_model, nullptr, task, config, rng, {});
        break;
      case StrategyKind::ReplayHighMem:
      case StrategyKind::ReplayLowMem: {
        train_task_with_replay(*pipe.ad_model, &*pipe.memory, task, config, rng, ctx);
        pipe.memory->store(task.train_images, i, ctx);
        break;
      }
      case StrategyKind::GenerativeReplay: {
        // Replays samples drawn from the model as it stood before this
        // task, not from the drifting copy being trained.
        std::optional<ModelSnapshot> before;
        if (i > 1) {
          before = snapshot(*pipe.ad_model, i - 1);
          ctx.model = before->model.get();
        }
        train_task_with_replay(*pipe.ad_model, &*pipe.memory, task, config, rng, ctx);
        break;
      }
      case StrategyKind::CompressedReplay:
      case StrategyKind::DegenerativeCompressedReplay: {
        const bool scale = pipe.memory->kind() == MemoryKind::Scale;
        if (scale) {
          scale_train_task(*mem_model, *pipe.memory, task, config, rng, prev_snapshot);
        } else if (config.paired_memory_model) {
          train_task_with_replay(*mem_model, &*pipe.memory, task, config, rng, ctx);
        }
        if (config.paired_memory_model) {
          // The AD model sees old tasks only through the memory's
          // reconstructions; SCALE refinement still uses the frozen
          // previous snapshot while this task trains.
          train_task_with_replay(*pipe.ad_model, &*pipe.memory, task, config, rng, ctx);
        } else if (!scale) {
          train_task_with_replay(*pipe.ad_model, &*pipe.memory, task, config, rng, ctx);
        }
        if (scale) pipe.sr_snapshot = snapshot(*mem_model, i);
        if (config.strategy_kind == StrategyKind::DegenerativeCompressedReplay)
          degenerative_rewrite_memory(*mem_model, *pipe.memory, i);
        pipe.memory->store(task.train_images, i, ctx);
        break;
      }
    }

    if (pipe.memory) {
      const ReplayBudget& b = pipe.memory->budget();
      if (b.bounded() && b.bytes_used > b.budget_bytes)
        throw std::logic_error("memory exceeded its byte budget after task " + std::to_string(i));
    }

    const int first_eval = config.strategy_kind == StrategyKind::SingleModel ? i : 1;
    for (int j = first_eval; j <= i; ++j) {
      const TaskData& past = stream.task(j);
      result.f1_matrix.set(i, j, evaluate_task_f1(*pipe.ad_model, past, config));
      ReconstructorHandle& fid_model = config.paired_memory_model ? *pipe.memory_model : *pipe.ad_model;
      result.fid_matrix.set(i, j, evaluate_task_fid(fid_model, past, config));
    }

    result.bytes_used_after_task.push_back(pipe.memory ? pipe.memory->bytes_used() : 0);
    result.seconds_per_task.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (!checkpoint_dir.empty()) save_run_state(checkpoint_dir, result, i, rng, config);
  }
  return result;
}

}  // namespace clad
