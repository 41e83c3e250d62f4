#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace clad {

// Pixel storage for one RGB image. Two encodings exist: 8-bit bytes
// (what goes into replay memory and onto disk, 3 bytes/pixel) and
// unit-interval floats (what goes through the models). Exactly one
// buffer is populated, selected by the encoding tag.
enum class PixelEncoding { U8, UnitFloat };

class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;

  static ImageTensor from_u8(int height, int width, std::vector<std::uint8_t> values);
  static ImageTensor from_unit(int height, int width, std::vector<float> values);
  static ImageTensor constant_u8(int height, int width, std::uint8_t value);

  int height() const { return height_; }
  int width() const { return width_; }
  PixelEncoding encoding() const { return encoding_; }
  bool empty() const { return height_ == 0; }

  const std::vector<std::uint8_t>& bytes() const;
  const std::vector<float>& reals() const;

  std::uint8_t at_u8(int y, int x, int c) const { return bytes()[index(y, x, c)]; }
  float at_unit(int y, int x, int c) const { return reals()[index(y, x, c)]; }

  // Conversions are value-preserving round trips for u8 -> unit -> u8.
  ImageTensor to_unit() const;
  ImageTensor to_u8() const;

  // Byte accounting always uses the 8-bit representation.
  std::size_t byte_size() const { return static_cast<std::size_t>(height_) * width_ * kChannels; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  bool operator==(const ImageTensor& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  PixelEncoding encoding_ = PixelEncoding::U8;
  std::vector<std::uint8_t> u8_;
  std::vector<float> f32_;
};

// Binary per-pixel labels, 0 = normal, 1 = anomalous.
class PixelMask {
 public:
  PixelMask() = default;
  PixelMask(int height, int width);
  PixelMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<std::uint8_t>& values() const { return values_; }
  std::vector<std::uint8_t>& values() { return values_; }

  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, std::uint8_t v) { values_[static_cast<std::size_t>(y) * width_ + x] = v; }

  std::size_t positive_count() const;
  bool empty() const { return height_ == 0; }

  bool operator==(const PixelMask& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
};

enum class ResizeMode { Smooth, Nearest };

// Bilinear (Smooth) or nearest-neighbor resize to target x target.
// Bilinear samples at pixel centers with edge clamping, so constant
// images stay constant and the operation is deterministic.
ImageTensor resize_image(const ImageTensor& img, int target, ResizeMode mode);

// Masks resize nearest-neighbor and re-binarize at 0.5 so labels stay in {0,1}.
PixelMask resize_mask(const PixelMask& mask, int target);

}  // namespace clad
