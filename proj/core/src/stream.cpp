#include "clad/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace clad {

void TaskStream::validate() const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const TaskData& t = tasks[i];
    if (t.task_id != static_cast<int>(i) + 1)
      throw std::invalid_argument("task ids must be 1..T without gaps, got " +
                               std::to_string(t.task_id) + " at position " + std::to_string(i + 1));
    for (const auto& [img, mask] : t.test_images) {
      if (mask.height() != img.height() || mask.width() != img.width())
        throw std::invalid_argument("test mask dimensions do not match image in task " + t.name);
    }
  }
}

namespace {

ImageTensor load_image_file(const fs::path& path, int working_size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("failed to read image: " + path.string());
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(bgr.rows) * bgr.cols * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      std::size_t base = (static_cast<std::size_t>(y) * bgr.cols + x) * 3;
      rgb[base + 0] = row[x][2];
      rgb[base + 1] = row[x][1];
      rgb[base + 2] = row[x][0];
    }
  }
  ImageTensor img = ImageTensor::from_u8(bgr.rows, bgr.cols, std::move(rgb));
  if (working_size > 0 && (img.height() != working_size || img.width() != working_size))
    img = resize_image(img, working_size, ResizeMode::Smooth);
  return img;
}

PixelMask load_mask_file(const fs::path& path, int working_size) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw std::runtime_error("failed to read mask: " + path.string());
  std::vector<std::uint8_t> vals(static_cast<std::size_t>(gray.rows) * gray.cols);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x)
      vals[static_cast<std::size_t>(y) * gray.cols + x] = gray.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
  PixelMask mask(gray.rows, gray.cols, std::move(vals));
  if (working_size > 0 && (mask.height() != working_size || mask.width() != working_size))
    mask = resize_mask(mask, working_size);
  return mask;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace

TaskStream load_mvtec_stream(const fs::path& root_path,
                             const std::vector<std::string>& task_names,
                             int working_size) {
  TaskStream stream;
  int next_id = 1;
  for (const std::string& name : task_names) {
    const fs::path cat = root_path / name;
    const fs::path train_good = cat / "train" / "good";
    const fs::path test_dir = cat / "test";
    const fs::path gt_dir = cat / "ground_truth";
    if (!fs::is_directory(train_good))
      throw std::runtime_error("MVTec ingestion: missing directory " + train_good.string() +
                               " for category " + name);
    if (!fs::is_directory(test_dir))
      throw std::runtime_error("MVTec ingestion: missing directory " + name + "/test");

    TaskData task;
    task.task_id = next_id++;
    task.name = name;
    for (const auto& file : sorted_files(train_good))
      task.train_images.push_back(load_image_file(file, working_size));

    auto defect_dirs = sorted_dirs(test_dir);
    if (defect_dirs.empty())
      throw std::runtime_error("MVTec ingestion: empty test dir " + name + "/test");
    for (const auto& defect_dir : defect_dirs) {
      const std::string defect = defect_dir.filename().string();
      auto test_files = sorted_files(defect_dir);
      if (defect == "good") {
        for (const auto& file : test_files) {
          ImageTensor img = load_image_file(file, working_size);
          PixelMask zero(img.height(), img.width());
          task.test_images.emplace_back(std::move(img), std::move(zero));
        }
        continue;
      }
      const fs::path defect_gt = gt_dir / defect;
      if (!fs::is_directory(defect_gt))
        throw std::runtime_error("MVTec ingestion: missing ground_truth for " + name + "/" + defect);
      auto mask_files = sorted_files(defect_gt);
      if (mask_files.size() != test_files.size())
        throw std::runtime_error("MVTec ingestion: mask/image count mismatch in " + name + "/test/" +
                                 defect + " (" + std::to_string(test_files.size()) + " images, " +
                                 std::to_string(mask_files.size()) + " masks)");
      for (std::size_t i = 0; i < test_files.size(); ++i) {
        task.test_images.emplace_back(load_image_file(test_files[i], working_size),
                                      load_mask_file(mask_files[i], working_size));
      }
    }
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

namespace {

struct Palette {
  float base[3];
  float accent[3];
  float anomaly[3];
};

// Task palettes are spread around the hue circle so tasks are visually
// distinct and cross-task forgetting is measurable at desk scale.
Palette task_palette(int task_id, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
  float hue = std::fmod(0.13f + 0.37f * static_cast<float>(task_id - 1), 1.0f);
  auto hue_to_rgb = [](float h, float s, float v, float* out) {
    float r = std::fabs(h * 6.0f - 3.0f) - 1.0f;
    float g = 2.0f - std::fabs(h * 6.0f - 2.0f);
    float b = 2.0f - std::fabs(h * 6.0f - 4.0f);
    float rgb[3] = {std::clamp(r, 0.0f, 1.0f), std::clamp(g, 0.0f, 1.0f), std::clamp(b, 0.0f, 1.0f)};
    for (int c = 0; c < 3; ++c) out[c] = ((rgb[c] - 1.0f) * s + 1.0f) * v;
  };
  Palette p{};
  hue_to_rgb(hue, 0.55f, 0.75f, p.base);
  hue_to_rgb(std::fmod(hue + 0.08f, 1.0f), 0.65f, 0.45f, p.accent);
  hue_to_rgb(std::fmod(hue + 0.45f, 1.0f), 0.7f, 0.85f, p.anomaly);
  for (int c = 0; c < 3; ++c) {
    p.base[c] = std::clamp(p.base[c] + jitter(rng), 0.0f, 1.0f);
    p.accent[c] = std::clamp(p.accent[c] + jitter(rng), 0.0f, 1.0f);
  }
  return p;
}

ImageTensor synth_texture(int size, int family, const Palette& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unif(0.0f, 1.0f);
  float phase = unif(rng) * 16.0f;
  // Low spatial frequency scaled to the image size: a couple of periods
  // across the frame, so small reconstruction models can actually fit it.
  const float two_pi = 6.2831853f;
  float freq = two_pi * (1.5f + 1.0f * unif(rng)) / static_cast<float>(size);
  std::uniform_real_distribution<float> noise(-0.02f, 0.02f);

  std::vector<float> vals(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float mix;
      switch (family) {
        case 0:  // diagonal waves
          mix = 0.5f + 0.25f * std::sin((x + y) * freq * 0.7f + phase);
          break;
        case 1:  // smooth grid
          mix = 0.5f + 0.25f * std::sin(x * freq + phase) * std::sin(y * freq);
          break;
        default:  // smooth blobs
          mix = 0.5f + 0.25f * std::sin(x * freq + phase) * std::cos(y * freq + phase * 0.7f);
          break;
      }
      for (int c = 0; c < 3; ++c) {
        float v = p.base[c] * mix + p.accent[c] * (1.0f - mix) + noise(rng);
        vals[(static_cast<std::size_t>(y) * size + x) * 3 + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return ImageTensor::from_unit(size, size, std::move(vals)).to_u8();
}

}  // namespace

TaskStream generate_synthetic_stream(int num_tasks, int images_per_task,
                                     int working_size, std::uint64_t seed) {
  if (num_tasks < 1) throw std::invalid_argument("num_tasks must be >= 1");
  if (images_per_task < 2) throw std::invalid_argument("images_per_task must be >= 2");
  if (working_size < 8) throw std::invalid_argument("working_size must be >= 8");

  std::mt19937_64 rng(seed);
  TaskStream stream;
  for (int t = 1; t <= num_tasks; ++t) {
    Palette palette = task_palette(t, rng);
    int family = (t - 1) % 3;
    TaskData task;
    task.task_id = t;
    task.name = "synthetic-" + std::to_string(t);
    for (int i = 0; i < images_per_task; ++i)
      task.train_images.push_back(synth_texture(working_size, family, palette, rng));

    // Test set: half normal, half with one injected anomaly patch.
    int num_test = std::max(2, images_per_task / 2);
    for (int i = 0; i < num_test; ++i) {
      ImageTensor img = synth_texture(working_size, family, palette, rng);
      PixelMask mask(working_size, working_size);
      if (i % 2 == 1) {
        std::uniform_int_distribution<int> side(working_size / 8, working_size / 4);
        int ph = side(rng), pw = side(rng);
        std::uniform_int_distribution<int> posy(0, working_size - ph);
        std::uniform_int_distribution<int> posx(0, working_size - pw);
        int y0 = posy(rng), x0 = posx(rng);
        auto vals = img.bytes();
        for (int y = y0; y < y0 + ph; ++y) {
          for (int x = x0; x < x0 + pw; ++x) {
            for (int c = 0; c < 3; ++c) {
              float orig = vals[(static_cast<std::size_t>(y) * working_size + x) * 3 + c] / 255.0f;
              float v = 0.4f * orig + 0.6f * palette.anomaly[c];
              vals[(static_cast<std::size_t>(y) * working_size + x) * 3 + c] =
                  static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
            mask.set(y, x, 1);
          }
        }
        img = ImageTensor::from_u8(working_size, working_size, std::move(vals));
      }
      task.test_images.emplace_back(std::move(img), std::move(mask));
    }
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

namespace {

void write_ppm(const fs::path& path, const ImageTensor& img) {
  const ImageTensor u8 = img.to_u8();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << u8.width() << " " << u8.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(u8.bytes().data()),
            static_cast<std::streamsize>(u8.bytes().size()));
}

ImageTensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error("unsupported PPM: " + path.string());
  in.get();
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("truncated PPM: " + path.string());
  return ImageTensor::from_u8(h, w, std::move(data));
}

void write_pgm(const fs::path& path, const PixelMask& mask) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
  for (auto v : mask.values()) out.put(v ? char(255) : char(0));
}

PixelMask read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error("unsupported PGM: " + path.string());
  in.get();
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  for (auto& v : raw) v = v >= 128 ? 1 : 0;
  return PixelMask(h, w, std::move(raw));
}

}  // namespace

void export_stream(const TaskStream& stream, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["tasks"] = json::array();
  for (const TaskData& task : stream.tasks) {
    json jt;
    jt["task_id"] = task.task_id;
    jt["name"] = task.name;
    jt["train"] = json::array();
    jt["test"] = json::array();
    const std::string prefix = "task" + std::to_string(task.task_id);
    for (std::size_t i = 0; i < task.train_images.size(); ++i) {
      std::string file = prefix + "_train_" + std::to_string(i) + ".ppm";
      write_ppm(dir / file, task.train_images[i]);
      jt["train"].push_back(file);
    }
    for (std::size_t i = 0; i < task.test_images.size(); ++i) {
      std::string img_file = prefix + "_test_" + std::to_string(i) + ".ppm";
      std::string mask_file = prefix + "_test_" + std::to_string(i) + "_mask.pgm";
      write_ppm(dir / img_file, task.test_images[i].first);
      write_pgm(dir / mask_file, task.test_images[i].second);
      jt["test"].push_back({{"image", img_file}, {"mask", mask_file}});
    }
    manifest["tasks"].push_back(std::move(jt));
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

TaskStream import_stream(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(in);
  TaskStream stream;
  for (const auto& jt : manifest.at("tasks")) {
    TaskData task;
    task.task_id = jt.at("task_id").get<int>();
    task.name = jt.at("name").get<std::string>();
    for (const auto& file : jt.at("train"))
      task.train_images.push_back(read_ppm(dir / file.get<std::string>()));
    for (const auto& pair : jt.at("test"))
      task.test_images.emplace_back(read_ppm(dir / pair.at("image").get<std::string>()),
                                    read_pgm(dir / pair.at("mask").get<std::string>()));
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

}  // namespace clad
