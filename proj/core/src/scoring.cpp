#include "clad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

namespace clad {

// Channel-mean squared error per pixel, then per-image min-max into
// [0,1]. A constant raw map normalizes to all-zero.
AnomalyMap normalized_error_map(const ImageTensor& image, const std::vector<float>& estimate) {
  const ImageTensor unit = image.to_unit();
  const int h = unit.height(), w = unit.width();
  AnomalyMap map;
  map.height = h;
  map.width = w;
  map.scores.resize(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float err = 0.0f;
      for (int c = 0; c < 3; ++c) {
        float d = unit.at_unit(y, x, c) - estimate[unit.index(y, x, c)];
        err += d * d;
      }
      map.scores[static_cast<std::size_t>(y) * w + x] = err / 3.0f;
    }
  }
  auto [mn, mx] = std::minmax_element(map.scores.begin(), map.scores.end());
  map.raw_min = *mn;
  map.raw_max = *mx;
  if (map.raw_max - map.raw_min <= 0.0f) {
    std::fill(map.scores.begin(), map.scores.end(), 0.0f);
  } else {
    const float span = map.raw_max - map.raw_min;
    for (auto& s : map.scores) s = (s - map.raw_min) / span;
  }
  return map;
}

int MaskSet::min_coverage() const {
  if (coverage_count.empty()) return 0;
  return *std::min_element(coverage_count.begin(), coverage_count.end());
}

AnomalyMap reconstruction_anomaly_map(ReconstructorHandle& model, const ImageTensor& image) {
  if (model.kind() == ModelKind::InpaintGen)
    throw std::logic_error("use inpaint_anomaly_map for inpainting models");
  ImageTensor input = image;
  if (model.kind() == ModelKind::SRGen) {
    const int low = model.config().working_size / 8;
    input = resize_image(resize_image(image, low, ResizeMode::Smooth),
                         model.config().working_size, ResizeMode::Smooth);
  }
  std::vector<ImageTensor> recon = model.reconstruct({input});
  return normalized_error_map(image, recon[0].to_unit().reals());
}

MaskSet build_mask_set(int height, int width, int patch_size, int num_passes, std::uint64_t seed) {
  if (num_passes < 1) throw std::invalid_argument("num_passes must be >= 1");
  if (patch_size < 1 || patch_size > height || patch_size > width)
    throw std::invalid_argument("patch_size cannot tile the grid");

  std::mt19937_64 rng(seed);
  MaskSet set;
  set.height = height;
  set.width = width;
  set.patch_size = patch_size;
  set.coverage_count.assign(static_cast<std::size_t>(height) * width, 0);

  // One partition per pass: a patch grid with a random offset splits the
  // image into tiles, and the tiles are dealt into two disjoint masks.
  std::uniform_int_distribution<int> offset(0, patch_size - 1);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int pass = 0; pass < num_passes; ++pass) {
    int oy = offset(rng), ox = offset(rng);
    PixelMask groups[2] = {PixelMask(height, width), PixelMask(height, width)};
    for (int ty = -1; ty * patch_size - oy < height; ++ty) {
      for (int tx = -1; tx * patch_size - ox < width; ++tx) {
        int group = coin(rng);
        int y0 = std::max(0, ty * patch_size - oy);
        int y1 = std::min(height, (ty + 1) * patch_size - oy);
        int x0 = std::max(0, tx * patch_size - ox);
        int x1 = std::min(width, (tx + 1) * patch_size - ox);
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) groups[group].set(y, x, 1);
      }
    }
    for (auto& g : groups) {
      if (g.positive_count() == 0) continue;  // a pass may land all tiles in one group
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          if (g.at(y, x)) ++set.coverage_count[static_cast<std::size_t>(y) * width + x];
      set.masks.push_back(std::move(g));
    }
  }
  if (set.min_coverage() < 1)
    throw std::invalid_argument("mask set does not cover the grid");
  return set;
}

ImageTensor inpaint_reconstruct(ReconstructorHandle& model, const ImageTensor& image,
                                const MaskSet& mask_set) {
  if (mask_set.height != image.height() || mask_set.width != image.width())
    throw std::invalid_argument("mask set dimensions do not match image");
  if (mask_set.min_coverage() < 1)
    throw std::invalid_argument("mask set leaves pixels uncovered");

  const ImageTensor unit = image.to_unit();
  const int h = unit.height(), w = unit.width();
  std::vector<double> fill_sum(static_cast<std::size_t>(h) * w * 3, 0.0);
  std::vector<int> fill_count(static_cast<std::size_t>(h) * w, 0);

  for (const PixelMask& mask : mask_set.masks) {
    std::vector<float> masked = unit.reals();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask.at(y, x))
          for (int c = 0; c < 3; ++c) masked[unit.index(y, x, c)] = 0.5f;
    ImageTensor input = ImageTensor::from_unit(h, w, std::move(masked));
    std::vector<ImageTensor> out = model.reconstruct({input});
    const ImageTensor fill_img = out[0].to_unit();
    const auto& fill = fill_img.reals();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask.at(y, x)) continue;
        for (int c = 0; c < 3; ++c) fill_sum[unit.index(y, x, c)] += fill[unit.index(y, x, c)];
        ++fill_count[static_cast<std::size_t>(y) * w + x];
      }
    }
  }

  std::vector<float> estimate(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int count = fill_count[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c)
        estimate[unit.index(y, x, c)] = static_cast<float>(fill_sum[unit.index(y, x, c)] / count);
    }
  }
  return ImageTensor::from_unit(h, w, std::move(estimate));
}

AnomalyMap inpaint_anomaly_map(ReconstructorHandle& model, const ImageTensor& image,
                               const MaskSet& mask_set) {
  ImageTensor estimate = inpaint_reconstruct(model, image, mask_set);
  return normalized_error_map(image, estimate.reals());
}

PixelMask binarize(const AnomalyMap& map, float threshold) {
  if (threshold < 0.0f || threshold > 1.0f)
    throw std::invalid_argument("threshold must be in [0,1]");
  PixelMask mask(map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      if (map.at(y, x) > threshold) mask.set(y, x, 1);
  return mask;
}

ThresholdResult best_f1_threshold(const std::vector<AnomalyMap>& maps,
                                  const std::vector<PixelMask>& gts, int grid_size) {
  if (maps.empty() || maps.size() != gts.size())
    throw std::invalid_argument("best_f1_threshold: empty or misaligned inputs");
  if (grid_size < 2) throw std::invalid_argument("threshold grid needs >= 2 points");
  for (std::size_t i = 0; i < maps.size(); ++i)
    if (maps[i].height != gts[i].height() || maps[i].width != gts[i].width())
      throw std::invalid_argument("best_f1_threshold: map/mask dimension mismatch");

  std::size_t total_positive = 0;
  for (const auto& gt : gts) total_positive += gt.positive_count();

  ThresholdResult best;
  if (total_positive == 0) {
    best.degenerate = true;
    return best;  // f1 defined as 0 with no positives
  }

  for (int g = 0; g < grid_size; ++g) {
    const float threshold = static_cast<float>(g) / static_cast<float>(grid_size - 1);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto& map = maps[i];
      const auto& gt = gts[i];
      for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
          bool pred = map.at(y, x) > threshold;
          bool truth = gt.at(y, x) != 0;
          if (pred && truth)
            ++tp;
          else if (pred)
            ++fp;
          else if (truth)
            ++fn;
        }
      }
    }
    float f1 = (tp == 0) ? 0.0f
                         : 2.0f * static_cast<float>(tp) /
                               static_cast<float>(2 * tp + fp + fn);
    if (f1 > best.f1) {
      best.f1 = f1;
      best.threshold = threshold;
    }
  }
  return best;
}

void export_anomaly_map(const AnomalyMap& map, const std::filesystem::path& path,
                        float chosen_threshold) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write anomaly map: " + path.string());
  out << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (float s : map.scores)
    out.put(static_cast<char>(std::lround(std::clamp(s, 0.0f, 1.0f) * 255.0f)));

  nlohmann::json sidecar;
  sidecar["raw_min"] = map.raw_min;
  sidecar["raw_max"] = map.raw_max;
  sidecar["threshold"] = chosen_threshold;
  std::ofstream side(path.string() + ".json");
  side << sidecar.dump(2) << "\n";
}

}  // namespace clad
