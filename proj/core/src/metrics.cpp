#include "saldist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "saldist/errors.hpp"
#include "saldist/losses.hpp"

namespace saldist {

namespace {

void require_binary(const Grid& g, const std::string& what) {
  for (double v : g.values()) {
    if (v != 0.0 && v != 1.0) throw ValidationError(what + " must be binary");
  }
}

void require_pair(const Grid& pred, const Grid& gt, const char* what) {
  require_shape(gt.shape(), pred.shape(), std::string(what) + " ground truth");
  require_binary(gt, std::string(what) + ": ground truth");
}

}  // namespace

double adaptive_threshold(const Grid& pred) { return std::min(2.0 * pred.mean(), 1.0); }

double f_beta(const Grid& pred, const Grid& gt) {
  require_pair(pred, gt, "f_beta");
  const double t = adaptive_threshold(pred);
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > t;
    const bool g = gt[i] == 1.0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp == 0.0) return tp + fn == 0.0 ? 1.0 : 0.0;
  const double precision = tp / (tp + fp);
  const double recall = tp + fn == 0.0 ? 0.0 : tp / (tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return (1.0 + kBetaSquared) * precision * recall / (kBetaSquared * precision + recall);
}

double mae(const Grid& pred, const Grid& gt) {
  require_shape(gt.shape(), pred.shape(), "mae ground truth");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<double>(pred.size());
}

double e_measure(const Grid& pred, const Grid& gt) {
  require_pair(pred, gt, "e_measure");
  const double t = adaptive_threshold(pred);
  Grid fg(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) fg[i] = pred[i] > t ? 1.0 : 0.0;
  return e_measure_binary(fg, gt);
}

double e_measure_binary(const Grid& fg, const Grid& gt) {
  require_pair(fg, gt, "e_measure");
  require_binary(fg, "e_measure foreground map");
  const std::size_t n = fg.size();
  const std::span<const double> fm = fg.values();
  const auto [fmin, fmax] = std::minmax_element(fm.begin(), fm.end());
  const bool pred_const = *fmin == *fmax;
  const bool gt_const = gt.min() == gt.max();

  if (pred_const || gt_const) {
    double agree = 0.0;
    for (std::size_t i = 0; i < n; ++i) agree += fm[i] == gt[i];
    return agree / static_cast<double>(n);
  }

  double mean_p = 0.0, mean_g = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_p += fm[i];
    mean_g += gt[i];
  }
  mean_p /= static_cast<double>(n);
  mean_g /= static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = fm[i] - mean_p;
    const double b = gt[i] - mean_g;
    const double xi = 2.0 * a * b / (a * a + b * b + 1e-12);
    acc += (1.0 + xi) * (1.0 + xi) / 4.0;
  }
  return acc / static_cast<double>(n);
}

EvalReport evaluate_dataset(const std::vector<ScoredPair>& pairs) {
  EvalReport report;
  for (const ScoredPair& p : pairs) {
    if (p.gt == nullptr) throw ValidationError("sample '" + p.id + "' has no ground truth");
    report.samples.push_back(SampleScores{p.id, f_beta(*p.pred, *p.gt), mae(*p.pred, *p.gt), e_measure(*p.pred, *p.gt)});
  }
  if (!report.samples.empty()) {
    const double n = static_cast<double>(report.samples.size());
    for (const SampleScores& s : report.samples) {
      report.mean_fbeta += s.fbeta;
      report.mean_mae += s.mae;
      report.mean_emeasure += s.emeasure;
    }
    report.mean_fbeta /= n;
    report.mean_mae /= n;
    report.mean_emeasure /= n;
  }
  return report;
}

void write_eval_report(std::ostream& out, const EvalReport& report) {
  out << "id,fbeta,mae,emeasure\n";
  for (const SampleScores& s : report.samples) {
    out << s.id << ',' << format_g17(s.fbeta) << ',' << format_g17(s.mae) << ',' << format_g17(s.emeasure) << '\n';
  }
  out << "mean," << format_g17(report.mean_fbeta) << ',' << format_g17(report.mean_mae) << ','
      << format_g17(report.mean_emeasure) << '\n';
}

}  // namespace saldist
