#include "clad/memory.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace clad {

std::string to_string(MemoryKind kind) {
  switch (kind) {
    case MemoryKind::RawHigh: return "raw_high";
    case MemoryKind::RawLow: return "raw_low";
    case MemoryKind::LatentCAE: return "latent_cae";
    case MemoryKind::LatentVAE: return "latent_vae";
    case MemoryKind::Scale: return "scale";
    case MemoryKind::Generative: return "generative";
  }
  throw std::logic_error("unknown MemoryKind");
}

MemoryKind memory_kind_from_string(const std::string& name) {
  if (name == "raw_high") return MemoryKind::RawHigh;
  if (name == "raw_low") return MemoryKind::RawLow;
  if (name == "latent_cae") return MemoryKind::LatentCAE;
  if (name == "latent_vae") return MemoryKind::LatentVAE;
  if (name == "scale") return MemoryKind::Scale;
  if (name == "generative") return MemoryKind::Generative;
  throw std::invalid_argument("unknown memory kind: " + name);
}

namespace {

std::size_t raw_image_bytes(int working_size) {
  return static_cast<std::size_t>(working_size) * working_size * 3;
}

}  // namespace

MemoryModule::MemoryModule(const MemoryConfig& config) : config_(config), rng_(config.seed) {
  if (config_.working_size < 8) throw std::invalid_argument("working_size too small");
  if (config_.scale_size == 0) config_.scale_size = config_.working_size / 8;
  if (config_.latent_elements == 0)
    config_.latent_elements = (config_.kind == MemoryKind::LatentVAE) ? 256 : 8192;

  const std::size_t raw_bytes = raw_image_bytes(config_.working_size);
  switch (config_.kind) {
    case MemoryKind::RawHigh:
      budget_.item_bytes = raw_bytes;
      budget_.budget_bytes = 0;  // unbounded
      break;
    case MemoryKind::RawLow:
      budget_.item_bytes = raw_bytes;
      budget_.budget_bytes = config_.budget_bytes ? config_.budget_bytes : 40 * raw_bytes;
      break;
    case MemoryKind::LatentCAE:
    case MemoryKind::LatentVAE:
      budget_.item_bytes = config_.latent_elements * sizeof(float);
      budget_.budget_bytes = config_.budget_bytes ? config_.budget_bytes : 40 * raw_bytes;
      break;
    case MemoryKind::Scale:
      budget_.item_bytes = raw_image_bytes(config_.scale_size);
      budget_.budget_bytes = config_.budget_bytes ? config_.budget_bytes : 40 * raw_bytes;
      break;
    case MemoryKind::Generative:
      budget_.item_bytes = 0;
      budget_.budget_bytes = 0;
      break;
  }
}

std::map<int, std::size_t> MemoryModule::per_task_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& item : items_) ++counts[item.source_task];
  return counts;
}

double MemoryModule::compression_factor() const {
  if (config_.kind == MemoryKind::Generative)
    throw std::logic_error("compression factor undefined for generative memory");
  return static_cast<double>(raw_image_bytes(config_.working_size)) /
         static_cast<double>(budget_.item_bytes);
}

MemoryModule::CompressionFactorReport MemoryModule::compression_report() const {
  CompressionFactorReport report;
  report.computed = compression_factor();
  if (config_.kind == MemoryKind::LatentVAE && config_.working_size == 256 &&
      config_.latent_elements == 256)
    report.quoted = 196.0;
  return report;
}

void MemoryModule::refresh_bytes_used() {
  budget_.bytes_used = items_.size() * budget_.item_bytes;
}

void MemoryModule::evict_to_budget() {
  if (!budget_.bounded()) return;
  while (items_.size() * budget_.item_bytes > budget_.budget_bytes) {
    auto counts = per_task_counts();
    int victim_task = 0;
    std::size_t max_count = 0;
    for (const auto& [task, count] : counts) {
      if (count > max_count) {
        max_count = count;
        victim_task = task;
      }
    }
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].source_task == victim_task) candidates.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    items_.erase(items_.begin() + static_cast<std::ptrdiff_t>(candidates[pick(rng_)]));
  }
  refresh_bytes_used();
}

bool MemoryModule::store(const std::vector<ImageTensor>& images, int task_id, ModelContext ctx) {
  if (config_.kind == MemoryKind::Generative) return false;  // advisory no-op
  switch (config_.kind) {
    case MemoryKind::RawHigh:
    case MemoryKind::RawLow:
      for (const auto& img : images) {
        MemoryItem item;
        item.source_task = task_id;
        item.image = img.to_u8();
        items_.push_back(std::move(item));
      }
      break;
    case MemoryKind::LatentCAE:
    case MemoryKind::LatentVAE: {
      if (!ctx.model) throw std::invalid_argument("latent memory store needs an encoder model");
      auto codes = encode(*ctx.model, images);
      for (auto& code : codes) {
        if (code.values.size() != config_.latent_elements)
          throw std::logic_error("latent code size does not match memory item size");
        MemoryItem item;
        item.source_task = task_id;
        item.code = std::move(code);
        items_.push_back(std::move(item));
      }
      break;
    }
    case MemoryKind::Scale:
      for (const auto& img : images) {
        MemoryItem item;
        item.source_task = task_id;
        item.image = resize_image(img.to_u8(), config_.scale_size, ResizeMode::Smooth);
        items_.push_back(std::move(item));
      }
      break;
    case MemoryKind::Generative:
      break;
  }
  refresh_bytes_used();
  evict_to_budget();
  return true;
}

std::vector<ImageTensor> MemoryModule::retrieve(int n, ModelContext ctx) {
  if (n <= 0) return {};
  if (config_.kind == MemoryKind::Generative) {
    if (!ctx.model || ctx.model->kind() != ModelKind::VAE)
      throw std::invalid_argument("generative retrieve needs a VAE in the model context");
    return sample_generative(*ctx.model, n, rng_());
  }
  if (items_.empty()) return {};  // advisory: nothing to replay yet

  // Uniform without replacement within the batch.
  std::vector<std::size_t> indices(items_.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::shuffle(indices.begin(), indices.end(), rng_);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), indices.size());
  indices.resize(take);

  std::vector<ImageTensor> out;
  out.reserve(take);
  switch (config_.kind) {
    case MemoryKind::RawHigh:
    case MemoryKind::RawLow:
      for (auto i : indices) out.push_back(items_[i].image);
      break;
    case MemoryKind::LatentCAE:
    case MemoryKind::LatentVAE: {
      if (!ctx.model) throw std::invalid_argument("latent memory retrieve needs a decoder model");
      std::vector<LatentCode> codes;
      codes.reserve(take);
      for (auto i : indices) codes.push_back(items_[i].code);
      out = decode(*ctx.model, codes);
      break;
    }
    case MemoryKind::Scale: {
      std::vector<ImageTensor> upscaled;
      upscaled.reserve(take);
      for (auto i : indices)
        upscaled.push_back(resize_image(items_[i].image, config_.working_size, ResizeMode::Smooth));
      out = ctx.sr_snapshot ? reconstruct_with(*ctx.sr_snapshot, upscaled) : std::move(upscaled);
      break;
    }
    case MemoryKind::Generative:
      break;
  }
  return out;
}

void MemoryModule::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json ledger;
  ledger["kind"] = to_string(config_.kind);
  ledger["working_size"] = config_.working_size;
  ledger["scale_size"] = config_.scale_size;
  ledger["budget_bytes"] = budget_.budget_bytes;
  ledger["item_bytes"] = budget_.item_bytes;
  ledger["latent_elements"] = config_.latent_elements;
  ledger["seed"] = config_.seed;
  {
    std::ostringstream state;
    state << rng_;
    ledger["rng_state"] = state.str();
  }
  json counts = json::object();
  for (const auto& [task, count] : per_task_counts()) counts[std::to_string(task)] = count;
  ledger["per_task_counts"] = counts;
  ledger["item_count"] = items_.size();

  std::ofstream payload(dir / "items.bin", std::ios::binary);
  json item_meta = json::array();
  for (const auto& item : items_) {
    json jm;
    jm["source_task"] = item.source_task;
    if (!item.image.empty()) {
      jm["type"] = "image";
      jm["side"] = item.image.height();
      const ImageTensor u8 = item.image.to_u8();
      const auto& bytes = u8.bytes();
      payload.write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
    } else {
      jm["type"] = "latent";
      jm["elements"] = item.code.values.size();
      payload.write(reinterpret_cast<const char*>(item.code.values.data()),
                    static_cast<std::streamsize>(item.code.byte_size()));
    }
    item_meta.push_back(std::move(jm));
  }
  ledger["items"] = std::move(item_meta);
  std::ofstream out(dir / "ledger.json");
  out << ledger.dump(2) << "\n";
}

MemoryModule MemoryModule::load(const fs::path& dir) {
  std::ifstream in(dir / "ledger.json");
  if (!in) throw std::runtime_error("missing memory ledger: " + (dir / "ledger.json").string());
  json ledger = json::parse(in);
  MemoryConfig config;
  config.kind = memory_kind_from_string(ledger.at("kind").get<std::string>());
  config.working_size = ledger.at("working_size").get<int>();
  config.scale_size = ledger.at("scale_size").get<int>();
  config.budget_bytes = ledger.at("budget_bytes").get<std::size_t>();
  config.latent_elements = ledger.at("latent_elements").get<std::size_t>();
  config.seed = ledger.at("seed").get<std::uint64_t>();
  MemoryModule memory(config);
  memory.budget_.budget_bytes = ledger.at("budget_bytes").get<std::size_t>();
  {
    std::istringstream state(ledger.at("rng_state").get<std::string>());
    state >> memory.rng_;
  }
  std::ifstream payload(dir / "items.bin", std::ios::binary);
  for (const auto& jm : ledger.at("items")) {
    MemoryItem item;
    item.source_task = jm.at("source_task").get<int>();
    if (jm.at("type") == "image") {
      int side = jm.at("side").get<int>();
      std::vector<std::uint8_t> bytes(static_cast<std::size_t>(side) * side * 3);
      payload.read(reinterpret_cast<char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
      item.image = ImageTensor::from_u8(side, side, std::move(bytes));
    } else {
      auto elements = jm.at("elements").get<std::size_t>();
      item.code.values.resize(elements);
      payload.read(reinterpret_cast<char*>(item.code.values.data()),
                   static_cast<std::streamsize>(elements * sizeof(float)));
    }
    if (!payload) throw std::runtime_error("truncated memory payload");
    memory.items_.push_back(std::move(item));
  }
  memory.refresh_bytes_used();
  return memory;
}

}  // namespace clad
