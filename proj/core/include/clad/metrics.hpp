#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clad/image.hpp"

namespace clad {

// Lower-triangular matrix of per-task scores: entry (i, j) is the score
// on task j's test set after training stage i. Entries may be absent
// (Single Model fills the diagonal only).
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::string metric_name, int total_tasks);

  const std::string& metric_name() const { return metric_name_; }
  int total_tasks() const { return total_tasks_; }

  void set(int stage, int task, double value);  // 1-based, task <= stage
  std::optional<double> get(int stage, int task) const;
  bool row_complete(int stage) const;
  double row_mean(int stage) const;  // mean over present entries
  int rows_filled() const;           // highest stage with any entry

  void to_csv(std::ostream& out) const;
  static ScoreMatrix from_csv(std::istream& in, const std::string& metric_name);

  bool operator==(const ScoreMatrix&) const = default;

 private:
  std::string metric_name_;
  int total_tasks_ = 0;
  std::vector<std::vector<double>> rows_;  // rows_[i-1] has i slots, NaN = absent
};

double pixel_f1(const PixelMask& pred, const PixelMask& gt);

// S_T: mean of the last row. Throws if the row is incomplete.
double average_score(const ScoreMatrix& matrix, int T);

struct ForgettingResult {
  double value = 0.0;
  std::vector<int> skipped_tasks;  // zero-denominator entries, reported not fatal
};

// F_T = (1/(T-1)) sum_j max_{l in j..T-1} (s_{l,j} - s_{T,j}) / s_{l,j}.
// The max is restricted to l >= j, where the lower triangle is defined.
ForgettingResult average_forgetting(const ScoreMatrix& matrix, int T);

// FID analog: (fid_{T,j} - b_j) / b_j with b_j the best (minimum) past
// FID on task j; positive means quality degraded.
ForgettingResult fid_forgetting(const ScoreMatrix& matrix, int T);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t sample_count = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Eigen::VectorXd extract(const ImageTensor& image) = 0;
  virtual std::string config_name() const = 0;
};

// Deterministic hand-coded extractor: per-cell channel means and
// standard deviations over a coarse grid. Needs no pretrained weights,
// so metric values are reproducible everywhere. FID values are only
// comparable within one extractor config.
class PatchStatsExtractor : public FeatureExtractor {
 public:
  explicit PatchStatsExtractor(int grid = 4) : grid_(grid) {}
  Eigen::VectorXd extract(const ImageTensor& image) override;
  std::string config_name() const override { return "patch_stats_g" + std::to_string(grid_); }

 private:
  int grid_;
};

FeatureStats extract_features(const std::vector<ImageTensor>& images, FeatureExtractor& extractor);

struct FidResult {
  double value = 0.0;
  double clamp_magnitude = 0.0;  // total negative eigenvalue mass clamped
};

// Eq: ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), evaluated
// with sqrt(S_r) S_g sqrt(S_r) so the square root stays symmetric PSD.
FidResult fid_detailed(const FeatureStats& real, const FeatureStats& gen);
double fid(const FeatureStats& real, const FeatureStats& gen);

}  // namespace clad
