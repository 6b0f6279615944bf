#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "saldist/grid.hpp"

namespace saldist {

inline constexpr double kBetaSquared = 0.3;

// min(2 * mean(pred), 1); a pixel is positive when strictly above it.
double adaptive_threshold(const Grid& pred);

// F-measure at the adaptive threshold. Empty prediction and empty ground
// truth score 1; otherwise no predicted positives (or P + R = 0) scores 0.
double f_beta(const Grid& pred, const Grid& gt);

double mae(const Grid& pred, const Grid& gt);

// Enhanced-alignment measure on the prediction binarised at the adaptive
// threshold. Both maps constant and equal -> 1; exactly one constant ->
// fraction of agreeing pixels; otherwise the mean of (1 + xi)^2 / 4 with
// xi = 2 a b / (a^2 + b^2 + 1e-12) over mean-centred maps.
double e_measure(const Grid& pred, const Grid& gt);

// The same measure on an already binary foreground map.
double e_measure_binary(const Grid& fg, const Grid& gt);

struct SampleScores {
  std::string id;
  double fbeta = 0.0;
  double mae = 0.0;
  double emeasure = 0.0;
};

struct EvalReport {
  std::vector<SampleScores> samples;
  double mean_fbeta = 0.0;
  double mean_mae = 0.0;
  double mean_emeasure = 0.0;

  std::size_t count() const { return samples.size(); }
};

struct ScoredPair {
  std::string id;
  const Grid* pred;
  const Grid* gt;  // nullptr means missing ground truth
};

EvalReport evaluate_dataset(const std::vector<ScoredPair>& pairs);

// `id,fbeta,mae,emeasure` rows followed by a `mean,...` row.
void write_eval_report(std::ostream& out, const EvalReport& report);

}  // namespace saldist
