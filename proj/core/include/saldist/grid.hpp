#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace saldist {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense channel-major, row-major field of doubles. Images, feature maps,
// saliency maps, masks and model parameters are all Grids.
class Grid {
 public:
  Grid() = default;
  explicit Grid(Shape shape, double fill = 0.0);
  Grid(Shape shape, std::vector<double> values);
  Grid(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : Grid(Shape{channels, height, width}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * shape_.height + y) * shape_.width + x];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> channel(std::size_t c) {
    return std::span<double>(values_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(values_).subspan(c * shape_.plane(), shape_.plane());
  }

  // Copy of channels [first, first + count).
  Grid channels_slice(std::size_t first, std::size_t count) const;

  bool all_finite() const;
  double sum() const;
  double mean() const;
  double min() const;
  double max() const;

  Grid& operator+=(const Grid& other);
  Grid& operator*=(double factor);

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Shape shape_{};
  std::vector<double> values_;
};

// Throws ShapeError mentioning `what` unless `actual == expected`.
void require_shape(const Shape& actual, const Shape& expected, const std::string& what);
void require_single_channel(const Grid& g, const std::string& what);

// Horizontal mirror of every channel.
Grid flip_horizontal(const Grid& g);

// Per-channel bilinear resampling at pixel centres:
// src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
Grid resize_bilinear(const Grid& g, std::size_t out_h, std::size_t out_w);

// Adjoint of resize_bilinear: scatters `seed` (shaped like the resize output)
// back onto a grid shaped `input_shape`.
Grid resize_bilinear_backward(const Grid& seed, const Shape& input_shape);

// Nearest-neighbour resampling with the same pixel-centre convention; keeps
// binary masks binary.
Grid resize_nearest(const Grid& g, std::size_t out_h, std::size_t out_w);

}  // namespace saldist
