#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clad/image.hpp"

namespace clad {

// One anomaly-detection task: normal-only training images plus labeled
// test pairs. Normal test images carry all-zero masks.
struct TaskData {
  int task_id = 0;  // 1-based position in the stream
  std::string name;
  std::vector<ImageTensor> train_images;
  std::vector<std::pair<ImageTensor, PixelMask>> test_images;
};

struct TaskStream {
  std::vector<TaskData> tasks;

  int total_tasks() const { return static_cast<int>(tasks.size()); }
  const TaskData& task(int task_id) const { return tasks.at(static_cast<std::size_t>(task_id) - 1); }

  // Enforces 1..T strictly increasing ids and the labeling invariants.
  void validate() const;
};

// Throws std::runtime_error naming the offending category/folder on a
// malformed layout. Expects the standard MVTec structure per category:
//   <root>/<name>/train/good/*.png
//   <root>/<name>/test/<defect>/*.png
//   <root>/<name>/ground_truth/<defect>/*_mask.png
TaskStream load_mvtec_stream(const std::filesystem::path& root_path,
                             const std::vector<std::string>& task_names,
                             int working_size);

// Seeded procedural stream for desk-scale runs. Each task is a distinct
// texture family with its own palette; test anomalies are injected
// rectangular patches with exactly known masks. Pure function of its
// arguments: identical seed gives a bit-identical stream.
TaskStream generate_synthetic_stream(int num_tasks, int images_per_task,
                                     int working_size, std::uint64_t seed);

// Directory export/import: 8-bit image files plus a manifest listing
// task order and per-image roles. Round-trips exactly.
void export_stream(const TaskStream& stream, const std::filesystem::path& dir);
TaskStream import_stream(const std::filesystem::path& dir);

}  // namespace clad
