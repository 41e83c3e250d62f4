#include "clad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace clad {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

ScoreMatrix::ScoreMatrix(std::string metric_name, int total_tasks)
    : metric_name_(std::move(metric_name)), total_tasks_(total_tasks) {
  if (total_tasks < 1) throw std::invalid_argument("ScoreMatrix needs >= 1 task");
  rows_.resize(static_cast<std::size_t>(total_tasks));
  for (int i = 0; i < total_tasks; ++i) rows_[i].assign(static_cast<std::size_t>(i) + 1, kNaN);
}

void ScoreMatrix::set(int stage, int task, double value) {
  if (stage < 1 || stage > total_tasks_ || task < 1 || task > stage)
    throw std::invalid_argument("ScoreMatrix::set outside the lower triangle");
  rows_[stage - 1][task - 1] = value;
}

std::optional<double> ScoreMatrix::get(int stage, int task) const {
  if (stage < 1 || stage > total_tasks_ || task < 1 || task > stage)
    throw std::invalid_argument("ScoreMatrix::get outside the lower triangle");
  double v = rows_[stage - 1][task - 1];
  if (std::isnan(v)) return std::nullopt;
  return v;
}

bool ScoreMatrix::row_complete(int stage) const {
  for (int j = 1; j <= stage; ++j)
    if (!get(stage, j)) return false;
  return true;
}

double ScoreMatrix::row_mean(int stage) const {
  double sum = 0.0;
  int count = 0;
  for (int j = 1; j <= stage; ++j) {
    if (auto v = get(stage, j)) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) throw std::runtime_error("ScoreMatrix row has no entries");
  return sum / count;
}

int ScoreMatrix::rows_filled() const {
  int last = 0;
  for (int i = 1; i <= total_tasks_; ++i)
    for (int j = 1; j <= i; ++j)
      if (get(i, j)) last = std::max(last, i);
  return last;
}

void ScoreMatrix::to_csv(std::ostream& out) const {
  out << "stage";
  for (int j = 1; j <= total_tasks_; ++j) out << ",task" << j;
  out << "\n";
  char buf[64];
  for (int i = 1; i <= total_tasks_; ++i) {
    out << i;
    for (int j = 1; j <= total_tasks_; ++j) {
      out << ",";
      if (j <= i) {
        if (auto v = get(i, j)) {
          std::snprintf(buf, sizeof(buf), "%.17g", *v);
          out << buf;
        }
      }
    }
    out << "\n";
  }
}

ScoreMatrix ScoreMatrix::from_csv(std::istream& in, const std::string& metric_name) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty score matrix CSV");
  int total = static_cast<int>(std::count(header.begin(), header.end(), ','));
  ScoreMatrix m(metric_name, total);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    int stage = std::stoi(cell);
    for (int j = 1; j <= total && std::getline(ss, cell, ','); ++j)
      if (j <= stage && !cell.empty()) m.set(stage, j, std::stod(cell));
  }
  return m;
}

double pixel_f1(const PixelMask& pred, const PixelMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw std::invalid_argument("pixel_f1: mask dimension mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  const auto& p = pred.values();
  const auto& g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i])
      ++tp;
    else if (p[i])
      ++fp;
    else if (g[i])
      ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double average_score(const ScoreMatrix& matrix, int T) {
  if (T < 1 || T > matrix.total_tasks()) throw std::out_of_range("average_score: bad T");
  double sum = 0.0;
  for (int j = 1; j <= T; ++j) {
    auto v = matrix.get(T, j);
    if (!v) throw std::invalid_argument("average_score: row " + std::to_string(T) + " incomplete");
    sum += *v;
  }
  return sum / T;
}

ForgettingResult average_forgetting(const ScoreMatrix& matrix, int T) {
  if (T < 2) throw std::invalid_argument("average_forgetting needs T >= 2");
  ForgettingResult result;
  double sum = 0.0;
  int counted = 0;
  for (int j = 1; j <= T - 1; ++j) {
    auto current = matrix.get(T, j);
    if (!current) throw std::runtime_error("average_forgetting: missing s_{T,j}");
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int l = j; l <= T - 1; ++l) {
      auto past = matrix.get(l, j);
      if (!past) throw std::runtime_error("average_forgetting: missing s_{l,j}");
      if (*past == 0.0) continue;  // degenerate denominator, skipped and reported
      best = std::max(best, (*past - *current) / *past);
      any = true;
    }
    if (!any) {
      result.skipped_tasks.push_back(j);
      continue;
    }
    sum += best;
    ++counted;
  }
  // Average over the tasks that had a usable denominator; skipped tasks are
  // reported rather than silently diluting the mean.
  result.value = counted > 0 ? sum / counted : 0.0;
  return result;
}

ForgettingResult fid_forgetting(const ScoreMatrix& matrix, int T) {
  if (T < 2) throw std::invalid_argument("fid_forgetting needs T >= 2");
  ForgettingResult result;
  double sum = 0.0;
  for (int j = 1; j <= T - 1; ++j) {
    auto current = matrix.get(T, j);
    if (!current) throw std::runtime_error("fid_forgetting: missing fid_{T,j}");
    double best_past = std::numeric_limits<double>::infinity();
    for (int l = j; l <= T - 1; ++l) {
      auto past = matrix.get(l, j);
      if (!past) throw std::runtime_error("fid_forgetting: missing fid_{l,j}");
      best_past = std::min(best_past, *past);
    }
    if (best_past == 0.0) {
      result.skipped_tasks.push_back(j);
      continue;
    }
    sum += (*current - best_past) / best_past;
  }
  result.value = sum / (T - 1);
  return result;
}

Eigen::VectorXd PatchStatsExtractor::extract(const ImageTensor& image) {
  const ImageTensor unit = image.to_unit();
  const int h = unit.height(), w = unit.width();
  const int dim = grid_ * grid_ * 3 * 2;
  Eigen::VectorXd features(dim);
  int idx = 0;
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      int y0 = gy * h / grid_, y1 = (gy + 1) * h / grid_;
      int x0 = gx * w / grid_, x1 = (gx + 1) * w / grid_;
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        int count = 0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            double v = unit.at_unit(y, x, c);
            sum += v;
            sq += v * v;
            ++count;
          }
        }
        double mean = sum / count;
        double var = std::max(0.0, sq / count - mean * mean);
        features[idx] = mean;
        features[grid_ * grid_ * 3 + idx] = std::sqrt(var);
        ++idx;
      }
    }
  }
  return features;
}

FeatureStats extract_features(const std::vector<ImageTensor>& images, FeatureExtractor& extractor) {
  if (images.empty()) throw std::invalid_argument("extract_features: empty image set");
  if (images.size() < 2)
    throw std::invalid_argument("extract_features: covariance needs >= 2 samples");
  std::vector<Eigen::VectorXd> features;
  features.reserve(images.size());
  for (const auto& img : images) features.push_back(extractor.extract(img));

  const Eigen::Index dim = features[0].size();
  FeatureStats stats;
  stats.sample_count = features.size();
  stats.mean = Eigen::VectorXd::Zero(dim);
  for (const auto& f : features) stats.mean += f;
  stats.mean /= static_cast<double>(features.size());
  stats.covariance = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& f : features) {
    Eigen::VectorXd d = f - stats.mean;
    stats.covariance += d * d.transpose();
  }
  stats.covariance /= static_cast<double>(features.size() - 1);
  return stats;
}

FidResult fid_detailed(const FeatureStats& real, const FeatureStats& gen) {
  if (real.mean.size() != gen.mean.size())
    throw std::invalid_argument("fid: feature dimension mismatch");
  const Eigen::Index dim = real.mean.size();

  // sqrt of the real covariance, negative eigenvalues clamped
  Eigen::MatrixXd sr = 0.5 * (real.covariance + real.covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_r(sr);
  FidResult result;
  Eigen::VectorXd ev = es_r.eigenvalues();
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (ev[i] < 0.0) {
      result.clamp_magnitude += -ev[i];
      ev[i] = 0.0;
    }
  }
  Eigen::MatrixXd sqrt_r =
      es_r.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es_r.eigenvectors().transpose();

  // symmetrized product sqrt(S_r) S_g sqrt(S_r)
  Eigen::MatrixXd m = sqrt_r * (0.5 * (gen.covariance + gen.covariance.transpose())) * sqrt_r;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(m);
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    double lambda = es_m.eigenvalues()[i];
    if (lambda < 0.0) {
      result.clamp_magnitude += -lambda;
      lambda = 0.0;
    }
    trace_sqrt += std::sqrt(lambda);
  }

  double value = (real.mean - gen.mean).squaredNorm() + real.covariance.trace() +
                 gen.covariance.trace() - 2.0 * trace_sqrt;
  if (value < 0.0) {
    result.clamp_magnitude += -value;
    value = 0.0;
  }
  result.value = value;
  return result;
}

double fid(const FeatureStats& real, const FeatureStats& gen) {
  return fid_detailed(real, gen).value;
}

}  // namespace clad
