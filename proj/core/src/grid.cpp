#include "saldist/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saldist/errors.hpp"

namespace saldist {

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

Grid::Grid(Shape shape, double fill) : shape_(shape), values_(shape.size(), fill) {}

Grid::Grid(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw ShapeError("grid data length " + std::to_string(values_.size()) + " does not match shape " +
                     shape_.str());
  }
}

Grid Grid::channels_slice(std::size_t first, std::size_t count) const {
  if (first + count > shape_.channels) {
    throw ShapeError("channel slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") out of range for " + shape_.str());
  }
  Grid out(Shape{count, shape_.height, shape_.width});
  auto src = values().subspan(first * shape_.plane(), count * shape_.plane());
  std::copy(src.begin(), src.end(), out.values_.begin());
  return out;
}

bool Grid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Grid::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Grid::mean() const { return values_.empty() ? 0.0 : sum() / static_cast<double>(values_.size()); }

double Grid::min() const { return *std::min_element(values_.begin(), values_.end()); }

double Grid::max() const { return *std::max_element(values_.begin(), values_.end()); }

Grid& Grid::operator+=(const Grid& other) {
  require_shape(other.shape(), shape_, "grid accumulation");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Grid& Grid::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected shape " + expected.str() + ", got " + actual.str());
  }
}

void require_single_channel(const Grid& g, const std::string& what) {
  if (g.channels() != 1 || g.empty()) {
    throw ShapeError(what + ": expected a single-channel grid, got " + g.shape().str());
  }
}

Grid flip_horizontal(const Grid& g) {
  Grid out(g.shape());
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t y = 0; y < g.height(); ++y)
      for (std::size_t x = 0; x < g.width(); ++x) out.at(c, y, x) = g.at(c, y, g.width() - 1 - x);
  return out;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of `hi`
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double upper = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, upper);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = Tap{lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

void require_resize_args(const Shape& s, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ParameterError("resize target must be at least 1x1");
  if (s.size() == 0) throw ShapeError("cannot resize an empty grid");
}

}  // namespace

Grid resize_bilinear(const Grid& g, std::size_t out_h, std::size_t out_w) {
  require_resize_args(g.shape(), out_h, out_w);
  if (out_h == g.height() && out_w == g.width()) return g;
  const auto ty = bilinear_taps(g.height(), out_h);
  const auto tx = bilinear_taps(g.width(), out_w);
  Grid out(Shape{g.channels(), out_h, out_w});
  for (std::size_t c = 0; c < g.channels(); ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = g.at(c, a.lo, b.lo) * (1.0 - b.frac) + g.at(c, a.lo, b.hi) * b.frac;
        const double bottom = g.at(c, a.hi, b.lo) * (1.0 - b.frac) + g.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1.0 - a.frac) + bottom * a.frac;
      }
    }
  }
  return out;
}

Grid resize_bilinear_backward(const Grid& seed, const Shape& input_shape) {
  require_resize_args(input_shape, seed.height(), seed.width());
  if (seed.channels() != input_shape.channels) {
    throw ShapeError("resize backward: channel count " + std::to_string(seed.channels()) +
                     " does not match input " + input_shape.str());
  }
  if (seed.height() == input_shape.height && seed.width() == input_shape.width) return seed;
  const auto ty = bilinear_taps(input_shape.height, seed.height());
  const auto tx = bilinear_taps(input_shape.width, seed.width());
  Grid grad(input_shape);
  for (std::size_t c = 0; c < seed.channels(); ++c) {
    for (std::size_t y = 0; y < seed.height(); ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < seed.width(); ++x) {
        const Tap& b = tx[x];
        const double s = seed.at(c, y, x);
        grad.at(c, a.lo, b.lo) += s * (1.0 - a.frac) * (1.0 - b.frac);
        grad.at(c, a.lo, b.hi) += s * (1.0 - a.frac) * b.frac;
        grad.at(c, a.hi, b.lo) += s * a.frac * (1.0 - b.frac);
        grad.at(c, a.hi, b.hi) += s * a.frac * b.frac;
      }
    }
  }
  return grad;
}

Grid resize_nearest(const Grid& g, std::size_t out_h, std::size_t out_w) {
  require_resize_args(g.shape(), out_h, out_w);
  if (out_h == g.height() && out_w == g.width()) return g;
  auto nearest = [](std::size_t d, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out);
    return std::min(static_cast<std::size_t>(std::floor(s)), in - 1);
  };
  Grid out(Shape{g.channels(), out_h, out_w});
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out.at(c, y, x) = g.at(c, nearest(y, g.height(), out_h), nearest(x, g.width(), out_w));
  return out;
}

}  // namespace saldist
