#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/random.hpp"

namespace spoof {

struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t locations() const noexcept { return height * width; }
  bool operator==(const ImageShape&) const = default;
};

inline std::string to_string(const ImageShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

enum class InitMode { Black, White, UniformRandom };

inline std::string_view to_string(InitMode mode) {
  switch (mode) {
    case InitMode::Black: return "black";
    case InitMode::White: return "white";
    case InitMode::UniformRandom: return "random";
  }
  return "black";
}

inline InitMode parse_init_mode(std::string_view text) {
  if (text == "black") return InitMode::Black;
  if (text == "white") return InitMode::White;
  if (text == "random" || text == "uniform" || text == "uniform_random") return InitMode::UniformRandom;
  fail(ErrorKind::Configuration, "unknown init mode '" + std::string(text) + "'");
}

/// Single-element write: channel/row/col index plus the new value.
struct PixelProposal {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t channel = 0;
  float value = 0.0f;

  bool operator==(const PixelProposal&) const = default;
};

/// Dense C x H x W image with every element in [0, 1], stored row-major
/// (channel-major planes). Values are immutable through the public API;
/// edits produce new images.
class Image {
 public:
  Image() = default;

  Image(ImageShape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    check_dimensions(shape_);
    if (data_.size() != shape_.size()) {
      fail(ErrorKind::Shape, "image data has " + std::to_string(data_.size()) + " values, shape " +
                                 to_string(shape_) + " needs " + std::to_string(shape_.size()));
    }
    for (float v : data_) {
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
        fail(ErrorKind::Validation, "image value " + std::to_string(v) + " outside [0,1]");
      }
    }
  }

  static Image filled(ImageShape shape, float value) {
    check_dimensions(shape);
    return Image(shape, std::vector<float>(shape.size(), value));
  }

  const ImageShape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }

  std::size_t offset(std::size_t channel, std::size_t row, std::size_t col) const noexcept {
    return (channel * shape_.height + row) * shape_.width + col;
  }

  float at(std::size_t channel, std::size_t row, std::size_t col) const {
    if (channel >= shape_.channels || row >= shape_.height || col >= shape_.width) {
      fail(ErrorKind::Index, "pixel (" + std::to_string(channel) + "," + std::to_string(row) + "," +
                                 std::to_string(col) + ") outside " + to_string(shape_));
    }
    return data_[offset(channel, row, col)];
  }

  bool operator==(const Image&) const = default;

  /// Copy with the element at flat `index` replaced.
  Image with_value(std::size_t index, float value) const {
    if (index >= data_.size()) fail(ErrorKind::Index, "flat index " + std::to_string(index) + " out of range");
    if (!std::isfinite(value) || value < 0.0f || value > 1.0f) {
      fail(ErrorKind::Validation, "image value " + std::to_string(value) + " outside [0,1]");
    }
    Image out = *this;
    out.data_[index] = value;
    return out;
  }

  static void check_dimensions(const ImageShape& shape) {
    if (shape.channels == 0 || shape.height == 0 || shape.width == 0) {
      fail(ErrorKind::InvalidDimension, "image dimensions must be >= 1, got " + to_string(shape));
    }
  }

 private:
  ImageShape shape_{};
  std::vector<float> data_;
};

inline Image new_canvas(ImageShape shape, InitMode mode, std::uint64_t rng_seed) {
  Image::check_dimensions(shape);
  switch (mode) {
    case InitMode::Black: return Image::filled(shape, 0.0f);
    case InitMode::White: return Image::filled(shape, 1.0f);
    case InitMode::UniformRandom: {
      Rng rng(rng_seed);
      std::vector<float> data(shape.size());
      for (auto& v : data) v = static_cast<float>(rng.uniform01());
      return Image(shape, std::move(data));
    }
  }
  fail(ErrorKind::Configuration, "unknown init mode");
}

inline void check_proposal(const ImageShape& shape, const PixelProposal& p) {
  if (p.row >= shape.height || p.col >= shape.width || p.channel >= shape.channels) {
    fail(ErrorKind::Index, "proposal (row " + std::to_string(p.row) + ", col " + std::to_string(p.col) +
                               ", channel " + std::to_string(p.channel) + ") outside " + to_string(shape));
  }
  if (!std::isfinite(p.value) || p.value < 0.0f || p.value > 1.0f) {
    fail(ErrorKind::Validation, "proposal value " + std::to_string(p.value) + " outside [0,1]");
  }
}

inline Image apply_proposal(const Image& img, const PixelProposal& p) {
  check_proposal(img.shape(), p);
  if (img.empty()) fail(ErrorKind::Shape, "cannot apply a proposal to an empty image");
  return img.with_value(img.offset(p.channel, p.row, p.col), p.value);
}

inline constexpr double kPixelTolerance = 1e-9;

/// Fraction of spatial locations (h, w) where any channel differs by more
/// than kPixelTolerance.
inline double changed_location_ratio(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Shape, "cannot diff " + to_string(a.shape()) + " against " + to_string(b.shape()));
  }
  if (a.empty()) fail(ErrorKind::Shape, "cannot diff empty images");
  const auto& s = a.shape();
  const auto da = a.data();
  const auto db = b.data();
  std::size_t changed = 0;
  for (std::size_t row = 0; row < s.height; ++row) {
    for (std::size_t col = 0; col < s.width; ++col) {
      for (std::size_t ch = 0; ch < s.channels; ++ch) {
        const std::size_t i = a.offset(ch, row, col);
        if (std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i])) > kPixelTolerance) {
          ++changed;
          break;
        }
      }
    }
  }
  return static_cast<double>(changed) / static_cast<double>(s.locations());
}

}  // namespace spoof
