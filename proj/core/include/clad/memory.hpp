#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "clad/image.hpp"
#include "clad/model.hpp"

namespace clad {

enum class MemoryKind { RawHigh, RawLow, LatentCAE, LatentVAE, Scale, Generative };

std::string to_string(MemoryKind kind);
MemoryKind memory_kind_from_string(const std::string& name);

// Byte-budget ledger. budget_bytes == 0 means unbounded (RawHigh) or
// not applicable (Generative).
struct ReplayBudget {
  std::size_t budget_bytes = 0;
  std::size_t bytes_used = 0;
  std::size_t item_bytes = 0;

  bool bounded() const { return budget_bytes > 0; }
  std::size_t capacity_items() const { return item_bytes == 0 ? 0 : budget_bytes / item_bytes; }
};

struct MemoryItem {
  int source_task = 0;
  ImageTensor image;  // raw or downscaled payload (8-bit)
  LatentCode code;    // latent payload

  std::size_t byte_size() const { return image.empty() ? code.byte_size() : image.byte_size(); }
};

struct MemoryConfig {
  MemoryKind kind = MemoryKind::RawLow;
  int working_size = 256;
  int scale_size = 0;              // SCALE stored side; 0 -> working_size / 8 (x64 factor)
  std::size_t budget_bytes = 0;    // 0 -> 40 raw images for bounded kinds
  std::size_t latent_elements = 0; // 0 -> 8192 (CAE) / 256 (VAE)
  std::uint64_t seed = 0;
};

// Everything a memory may need from the models: an encoder/decoder (or
// generative VAE) and, for SCALE retrieval, the previous-task SR snapshot.
struct ModelContext {
  ReconstructorHandle* model = nullptr;
  const ModelSnapshot* sr_snapshot = nullptr;
};

class MemoryModule {
 public:
  explicit MemoryModule(const MemoryConfig& config);

  MemoryKind kind() const { return config_.kind; }
  const MemoryConfig& config() const { return config_; }
  const ReplayBudget& budget() const { return budget_; }
  std::size_t bytes_used() const { return budget_.bytes_used; }
  std::size_t item_count() const { return items_.size(); }
  const std::vector<MemoryItem>& items() const { return items_; }
  std::vector<MemoryItem>& mutable_items() { return items_; }
  std::map<int, std::size_t> per_task_counts() const;
  int scale_size() const { return config_.scale_size; }

  // raw bytes per image / bytes per stored item. Throws for Generative.
  double compression_factor() const;

  // The computed factor together with the externally quoted figure for
  // this configuration, when one exists and disagrees (VAE latent at
  // 256x256 is commonly quoted as 196 although the arithmetic gives 192).
  struct CompressionFactorReport {
    double computed = 0.0;
    std::optional<double> quoted;

    bool discrepancy() const { return quoted.has_value() && *quoted != computed; }
  };
  CompressionFactorReport compression_report() const;

  // Returns false (advisory) for Generative, where nothing is stored.
  // At capacity, evicts uniformly at random inside the task with the
  // largest representation until the budget holds.
  bool store(const std::vector<ImageTensor>& images, int task_id, ModelContext ctx = {});

  // Empty result on empty memory is the advisory signal. SCALE output is
  // refined through ctx.sr_snapshot when present, otherwise the plain
  // bilinear upscale is returned.
  std::vector<ImageTensor> retrieve(int n, ModelContext ctx = {});

  void refresh_bytes_used();

  void save(const std::filesystem::path& dir) const;
  static MemoryModule load(const std::filesystem::path& dir);

 private:
  void evict_to_budget();

  MemoryConfig config_;
  ReplayBudget budget_;
  std::vector<MemoryItem> items_;
  std::mt19937_64 rng_;
};

}  // namespace clad
