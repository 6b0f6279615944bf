#include "saldist/texture.hpp"

#include <algorithm>
#include <cmath>

#include "saldist/errors.hpp"

namespace saldist {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Depth: return "depth";
    case Modality::Thermal: return "thermal";
    case Modality::Flow: return "flow";
  }
  return "unknown";
}

std::optional<Modality> parse_modality(std::string_view name) {
  for (Modality m : kAllModalities)
    if (modality_name(m) == name) return m;
  return std::nullopt;
}

ModalityStack::ModalityStack(Grid planes, std::vector<Modality> declared, std::vector<bool> available)
    : planes_(std::move(planes)), declared_(std::move(declared)), available_(std::move(available)) {
  if (planes_.channels() != 3 + declared_.size() || available_.size() != declared_.size()) {
    throw ShapeError("modality stack: " + std::to_string(planes_.channels()) + " channels for " +
                     std::to_string(declared_.size()) + " declared modalities");
  }
  for (double v : planes_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("modality stack values must lie in [0, 1]");
  }
}

bool ModalityStack::available(Modality m) const {
  for (std::size_t i = 0; i < declared_.size(); ++i)
    if (declared_[i] == m) return available_[i];
  return false;
}

ModalityStack ModalityStack::flipped() const {
  return ModalityStack(flip_horizontal(planes_), declared_, available_);
}

ModalityStack ModalityStack::resized(std::size_t h, std::size_t w) const {
  return ModalityStack(resize_bilinear(planes_, h, w), declared_, available_);
}

ModalityStack stack_modalities(const Grid& rgb, const std::vector<Modality>& declared,
                               const std::vector<std::optional<Grid>>& extras) {
  if (rgb.channels() != 3) throw ShapeError("rgb plane must have 3 channels, got " + rgb.shape().str());
  if (extras.size() != declared.size()) {
    throw ParameterError("stack_modalities: " + std::to_string(extras.size()) + " planes for " +
                         std::to_string(declared.size()) + " declared modalities");
  }
  std::vector<Modality> order = declared;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw ParameterError("stack_modalities: duplicate modality declaration");
  }

  const std::size_t h = rgb.height(), w = rgb.width();
  Grid planes(Shape{3 + order.size(), h, w});
  auto rgb_values = rgb.values();
  std::copy(rgb_values.begin(), rgb_values.end(), planes.values().begin());
  std::vector<bool> available(order.size(), false);
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const Modality m = order[slot];
    const auto pos = static_cast<std::size_t>(std::find(declared.begin(), declared.end(), m) - declared.begin());
    auto dst = planes.channel(3 + slot);
    const auto& extra = extras[pos];
    if (!extra) {
      std::fill(dst.begin(), dst.end(), kMissingModalityValue);
      continue;
    }
    if (extra->channels() != 1 || extra->height() != h || extra->width() != w) {
      throw ShapeError(std::string(modality_name(m)) + " plane has shape " + extra->shape().str() +
                       ", expected 1x" + std::to_string(h) + "x" + std::to_string(w));
    }
    std::copy(extra->values().begin(), extra->values().end(), dst.begin());
    available[slot] = true;
  }
  return ModalityStack(std::move(planes), std::move(order), std::move(available));
}

TextureField::TextureField(std::size_t height, std::size_t width, std::size_t k)
    : height_(height), width_(width), k_(k) {
  if (k < 3 || k % 2 == 0) throw ParameterError("texture window must be odd and >= 3, got " + std::to_string(k));
  const std::size_t n = height * width * k * k;
  entries_.assign(n, 0.0);
  valid_.assign(n, 0);
  counts_.assign(height * width, 0);
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      for (std::size_t s = 0; s < k * k; ++s) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(s / k) - r;
        const auto nx = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(s % k) - r;
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(height) ||
            nx >= static_cast<std::ptrdiff_t>(width)) {
          continue;
        }
        valid_[i * k * k + s] = 1;
        ++counts_[i];
      }
    }
  }
}

std::vector<double> TextureField::vector(std::size_t pixel) const {
  std::vector<double> out;
  out.reserve(counts_[pixel]);
  for (std::size_t s = 0; s < slots(); ++s)
    if (valid(pixel, s)) out.push_back(entry(pixel, s));
  return out;
}

std::size_t TextureField::neighbour(std::size_t pixel, std::size_t slot) const {
  const std::size_t r = k_ / 2;
  const std::size_t y = pixel / width_ + slot / k_ - r;
  const std::size_t x = pixel % width_ + slot % k_ - r;
  return y * width_ + x;
}

bool TextureField::aligned_with(const TextureField& other) const {
  return height_ == other.height_ && width_ == other.width_ && k_ == other.k_ && valid_ == other.valid_;
}

TextureField texture_saliency(const Grid& pred, std::size_t k) {
  require_single_channel(pred, "texture_saliency");
  TextureField field(pred.height(), pred.width(), k);
  for (std::size_t i = 0; i < field.pixels(); ++i)
    for (std::size_t s = 0; s < field.slots(); ++s)
      if (field.valid(i, s)) field.entry(i, s) = std::abs(pred[i] - pred[field.neighbour(i, s)]);
  return field;
}

TextureField texture_appearance(const ModalityStack& stack, std::size_t k, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("texture_appearance alpha must be positive");
  const Grid& planes = stack.planes();
  TextureField field(planes.height(), planes.width(), k);
  const std::size_t plane = planes.shape().plane();
  for (std::size_t i = 0; i < field.pixels(); ++i) {
    for (std::size_t s = 0; s < field.slots(); ++s) {
      if (!field.valid(i, s)) continue;
      const std::size_t j = field.neighbour(i, s);
      double dist = 0.0;
      for (std::size_t c = 0; c < planes.channels(); ++c) {
        const double d = planes[c * plane + i] - planes[c * plane + j];
        dist += d * d;
      }
      field.entry(i, s) = std::exp(-alpha * dist);
    }
  }
  return field;
}

Grid boundary_mask(const Grid& pred) {
  require_single_channel(pred, "boundary_mask");
  const std::size_t h = pred.height(), w = pred.width();
  auto label = [&](std::size_t y, std::size_t x) { return pred.at(0, y, x) > 0.5; };
  Grid mask(Shape{1, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const bool v = label(y, x);
      const bool edge = (y > 0 && label(y - 1, x) != v) || (y + 1 < h && label(y + 1, x) != v) ||
                        (x > 0 && label(y, x - 1) != v) || (x + 1 < w && label(y, x + 1) != v);
      mask.at(0, y, x) = edge ? 1.0 : 0.0;
    }
  }
  return mask;
}

}  // namespace saldist
