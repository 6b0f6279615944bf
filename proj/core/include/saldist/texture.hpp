#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "saldist/grid.hpp"

namespace saldist {

// Extra per-pixel planes that may accompany RGB. Stack order is the enum order.
enum class Modality { Depth = 0, Thermal = 1, Flow = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::Depth, Modality::Thermal, Modality::Flow};
inline constexpr double kMissingModalityValue = 0.5;

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);

// RGB plus one channel per declared modality, all values in [0, 1]. Missing
// modalities are filled with kMissingModalityValue.
class ModalityStack {
 public:
  ModalityStack() = default;
  ModalityStack(Grid planes, std::vector<Modality> declared, std::vector<bool> available);

  const Grid& planes() const { return planes_; }
  const std::vector<Modality>& declared() const { return declared_; }
  bool available(Modality m) const;
  Grid rgb() const { return planes_.channels_slice(0, 3); }
  std::size_t height() const { return planes_.height(); }
  std::size_t width() const { return planes_.width(); }

  // Number of ||.||^2 terms in the appearance distance: RGB plus each extra.
  std::size_t modality_terms() const { return 1 + declared_.size(); }

  ModalityStack flipped() const;
  ModalityStack resized(std::size_t h, std::size_t w) const;

 private:
  Grid planes_;
  std::vector<Modality> declared_;
  std::vector<bool> available_;
};

// `extras[i]` belongs to `declared[i]`; std::nullopt marks a missing plane.
ModalityStack stack_modalities(const Grid& rgb, const std::vector<Modality>& declared,
                               const std::vector<std::optional<Grid>>& extras);

// Per-pixel neighbourhood vectors over a k x k window centred on each pixel
// (centre included). Slot s of pixel i is window offset (s / k - r, s % k - r)
// with r = k / 2; slots falling outside the image are invalid and hold 0.
class TextureField {
 public:
  TextureField(std::size_t height, std::size_t width, std::size_t k);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t window() const { return k_; }
  std::size_t slots() const { return k_ * k_; }
  std::size_t pixels() const { return height_ * width_; }

  double entry(std::size_t pixel, std::size_t slot) const { return entries_[pixel * slots() + slot]; }
  double& entry(std::size_t pixel, std::size_t slot) { return entries_[pixel * slots() + slot]; }
  bool valid(std::size_t pixel, std::size_t slot) const { return valid_[pixel * slots() + slot] != 0; }
  std::size_t count(std::size_t pixel) const { return counts_[pixel]; }

  // Valid entries of one pixel in slot order.
  std::vector<double> vector(std::size_t pixel) const;

  // Pixel index of the neighbour in `slot`; only meaningful for valid slots.
  std::size_t neighbour(std::size_t pixel, std::size_t slot) const;

  bool aligned_with(const TextureField& other) const;

 private:
  std::size_t height_, width_, k_;
  std::vector<double> entries_;
  std::vector<unsigned char> valid_;
  std::vector<std::size_t> counts_;
};

// t^s_{i,j} = |p_i - p_j|.
TextureField texture_saliency(const Grid& pred, std::size_t k);

// t^a_{i,j} = exp(-alpha * sum over channels of (x_i - x_j)^2); RGB's three
// channels form one modality term, each extra channel another.
TextureField texture_appearance(const ModalityStack& stack, std::size_t k, double alpha);

// 1 where the 0.5-binarised prediction differs from a 4-connected neighbour.
Grid boundary_mask(const Grid& pred);

}  // namespace saldist
