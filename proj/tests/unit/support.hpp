#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "saldist/grid.hpp"
#include "saldist/rng.hpp"

namespace testing {

inline saldist::Grid random_grid(saldist::Rng& rng, saldist::Shape shape, double lo = -1.0, double hi = 1.0) {
  saldist::Grid g(shape);
  for (double& v : g.values()) v = rng.uniform(lo, hi);
  return g;
}

// Values in [lo, hi] kept at least `gap` away from `avoid`.
inline saldist::Grid random_grid_avoiding(saldist::Rng& rng, saldist::Shape shape, double lo, double hi, double avoid,
                                          double gap) {
  saldist::Grid g(shape);
  for (double& v : g.values()) {
    do v = rng.uniform(lo, hi);
    while (std::abs(v - avoid) < gap);
  }
  return g;
}

inline double dot(const saldist::Grid& a, const saldist::Grid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(const saldist::Grid& a, const saldist::Grid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("saldist_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
