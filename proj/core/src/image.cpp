#include "clad/image.hpp"

#include <algorithm>
#include <cmath>

namespace clad {

namespace {

void check_dims(int height, int width) {
  if (height <= 0 || width <= 0)
    throw std::invalid_argument("image dimensions must be positive");
}

}  // namespace

ImageTensor ImageTensor::from_u8(int height, int width, std::vector<std::uint8_t> values) {
  check_dims(height, width);
  if (values.size() != static_cast<std::size_t>(height) * width * kChannels)
    throw std::invalid_argument("u8 buffer size does not match dimensions");
  ImageTensor img;
  img.height_ = height;
  img.width_ = width;
  img.encoding_ = PixelEncoding::U8;
  img.u8_ = std::move(values);
  return img;
}

ImageTensor ImageTensor::from_unit(int height, int width, std::vector<float> values) {
  check_dims(height, width);
  if (values.size() != static_cast<std::size_t>(height) * width * kChannels)
    throw std::invalid_argument("float buffer size does not match dimensions");
  for (float v : values)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument("unit-interval image has value outside [0,1]");
  ImageTensor img;
  img.height_ = height;
  img.width_ = width;
  img.encoding_ = PixelEncoding::UnitFloat;
  img.f32_ = std::move(values);
  return img;
}

ImageTensor ImageTensor::constant_u8(int height, int width, std::uint8_t value) {
  check_dims(height, width);
  return from_u8(height, width,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width * kChannels, value));
}

const std::vector<std::uint8_t>& ImageTensor::bytes() const {
  if (encoding_ != PixelEncoding::U8)
    throw std::logic_error("image is not 8-bit encoded; call to_u8() first");
  return u8_;
}

const std::vector<float>& ImageTensor::reals() const {
  if (encoding_ != PixelEncoding::UnitFloat)
    throw std::logic_error("image is not unit-float encoded; call to_unit() first");
  return f32_;
}

ImageTensor ImageTensor::to_unit() const {
  if (encoding_ == PixelEncoding::UnitFloat) return *this;
  std::vector<float> out(u8_.size());
  for (std::size_t i = 0; i < u8_.size(); ++i) out[i] = static_cast<float>(u8_[i]) / 255.0f;
  return from_unit(height_, width_, std::move(out));
}

ImageTensor ImageTensor::to_u8() const {
  if (encoding_ == PixelEncoding::U8) return *this;
  std::vector<std::uint8_t> out(f32_.size());
  for (std::size_t i = 0; i < f32_.size(); ++i) {
    float v = std::clamp(f32_[i], 0.0f, 1.0f) * 255.0f;
    out[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return from_u8(height_, width_, std::move(out));
}

PixelMask::PixelMask(int height, int width)
    : height_(height), width_(width), values_(static_cast<std::size_t>(height) * width, 0) {
  check_dims(height, width);
}

PixelMask::PixelMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  check_dims(height, width);
  if (values_.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("mask buffer size does not match dimensions");
  for (auto v : values_)
    if (v > 1) throw std::invalid_argument("mask values must be 0 or 1");
}

std::size_t PixelMask::positive_count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), 1));
}

namespace {

float bilinear_sample(const std::vector<float>& src, int h, int w, int c, float fy, float fx, int ch) {
  int y0 = static_cast<int>(std::floor(fy));
  int x0 = static_cast<int>(std::floor(fx));
  float dy = fy - y0;
  float dx = fx - x0;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  auto at = [&](int y, int x) {
    return src[(static_cast<std::size_t>(clampi(y, h)) * w + clampi(x, w)) * ch + c];
  };
  float top = at(y0, x0) * (1.0f - dx) + at(y0, x0 + 1) * dx;
  float bot = at(y0 + 1, x0) * (1.0f - dx) + at(y0 + 1, x0 + 1) * dx;
  return top * (1.0f - dy) + bot * dy;
}

}  // namespace

ImageTensor resize_image(const ImageTensor& img, int target, ResizeMode mode) {
  if (target < 1) throw std::invalid_argument("resize target must be >= 1");
  if (img.empty()) throw std::invalid_argument("cannot resize an empty image");
  if (img.height() == target && img.width() == target) return img;

  const ImageTensor unit = img.to_unit();
  const auto& src = unit.reals();
  const int h = unit.height(), w = unit.width();
  const float sy = static_cast<float>(h) / target;
  const float sx = static_cast<float>(w) / target;

  std::vector<float> out(static_cast<std::size_t>(target) * target * ImageTensor::kChannels);
  for (int y = 0; y < target; ++y) {
    for (int x = 0; x < target; ++x) {
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        float v;
        if (mode == ResizeMode::Nearest) {
          int ys = std::clamp(static_cast<int>((y + 0.5f) * sy), 0, h - 1);
          int xs = std::clamp(static_cast<int>((x + 0.5f) * sx), 0, w - 1);
          v = src[(static_cast<std::size_t>(ys) * w + xs) * ImageTensor::kChannels + c];
        } else {
          float fy = (y + 0.5f) * sy - 0.5f;
          float fx = (x + 0.5f) * sx - 0.5f;
          v = bilinear_sample(src, h, w, c, fy, fx, ImageTensor::kChannels);
        }
        out[(static_cast<std::size_t>(y) * target + x) * ImageTensor::kChannels + c] =
            std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  ImageTensor result = ImageTensor::from_unit(target, target, std::move(out));
  return img.encoding() == PixelEncoding::U8 ? result.to_u8() : result;
}

PixelMask resize_mask(const PixelMask& mask, int target) {
  if (target < 1) throw std::invalid_argument("resize target must be >= 1");
  if (mask.height() == target && mask.width() == target) return mask;
  const float sy = static_cast<float>(mask.height()) / target;
  const float sx = static_cast<float>(mask.width()) / target;
  PixelMask out(target, target);
  for (int y = 0; y < target; ++y) {
    for (int x = 0; x < target; ++x) {
      int ys = std::clamp(static_cast<int>((y + 0.5f) * sy), 0, mask.height() - 1);
      int xs = std::clamp(static_cast<int>((x + 0.5f) * sx), 0, mask.width() - 1);
      out.set(y, x, mask.at(ys, xs) >= 1 ? 1 : 0);
    }
  }
  return out;
}

}  // namespace clad
