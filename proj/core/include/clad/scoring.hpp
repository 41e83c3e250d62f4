#pragma once

#include <filesystem>
#include <vector>

#include "clad/image.hpp"
#include "clad/model.hpp"

namespace clad {

// Per-pixel anomaly scores in [0,1] after per-image min-max
// normalization. The pre-normalization extrema are kept so exported maps
// stay auditable.
struct AnomalyMap {
  int height = 0;
  int width = 0;
  std::vector<float> scores;
  float raw_min = 0.0f;
  float raw_max = 0.0f;

  float at(int y, int x) const { return scores[static_cast<std::size_t>(y) * width + x]; }
};

// Occlusion masks for multi-pass inpainting. Each pass is one random
// disjoint-patch partition of the grid, so every pixel is occluded
// exactly once per pass.
struct MaskSet {
  int height = 0;
  int width = 0;
  int patch_size = 0;
  std::vector<PixelMask> masks;
  std::vector<int> coverage_count;  // per pixel, over all masks

  int min_coverage() const;
};

// Channel-mean squared error per pixel between image and estimate
// (unit floats, same layout), min-max normalized per image; a constant
// raw map normalizes to all-zero.
AnomalyMap normalized_error_map(const ImageTensor& image, const std::vector<float>& estimate);

// Error map against the model's reconstruction. SR models receive the
// blurry downscale-upscale of the image as their input.
AnomalyMap reconstruction_anomaly_map(ReconstructorHandle& model, const ImageTensor& image);

MaskSet build_mask_set(int height, int width, int patch_size, int num_passes, std::uint64_t seed);

// Multi-pass masked inpainting: occluded regions are filled from
// context, per-pixel estimates are averaged over the passes that masked
// that pixel, and the map is the normalized error against the original.
AnomalyMap inpaint_anomaly_map(ReconstructorHandle& model, const ImageTensor& image,
                               const MaskSet& mask_set);

// The averaged inpainting estimate itself (unit-float encoding).
ImageTensor inpaint_reconstruct(ReconstructorHandle& model, const ImageTensor& image,
                                const MaskSet& mask_set);

PixelMask binarize(const AnomalyMap& map, float threshold);

struct ThresholdResult {
  float threshold = 0.0f;
  float f1 = 0.0f;
  bool degenerate = false;  // no positive ground-truth pixels in the pool
};

// Pooled sweep over an even threshold grid; returns the best pooled f1.
ThresholdResult best_f1_threshold(const std::vector<AnomalyMap>& maps,
                                  const std::vector<PixelMask>& gts, int grid_size = 101);

// 8-bit grayscale export with a JSON sidecar recording the
// normalization extrema and chosen threshold.
void export_anomaly_map(const AnomalyMap& map, const std::filesystem::path& path,
                        float chosen_threshold);

}  // namespace clad
