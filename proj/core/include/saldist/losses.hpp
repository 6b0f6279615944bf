#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "saldist/grad_check.hpp"
#include "saldist/grid.hpp"
#include "saldist/texture.hpp"

namespace saldist {

struct LossWeights {
  double confidence = 1.0;  // lambda_c
  double boundary = 0.05;   // lambda_b
  double multiscale = 1.0;  // lambda_m

  void validate() const;
};

struct LossReport {
  double csd_main = 0.0;
  double csd_ref = 0.0;
  double btm_main = 0.0;
  double btm_ref = 0.0;
  double ms = 0.0;
  double total = 0.0;
  double rho = 0.0;
};

// Curriculum exponent 2^(1 - rho): 2 at the start of training, 1 at the end.
double csd_exponent(double rho);

// Per-pixel term -|p - 0.5|^e and its derivative; the derivative is 0 at p = 0.5.
ValueGrad csd_summand(double p, double rho);

// Confidence-aware distillation loss: -(1/N) sum |p_i - 0.5|^(2^(1 - rho)).
ValueGrad csd_loss(const Grid& pred, double rho);

// Boundary texture matching: sum over boundary pixels of T^s_i . T^a_i divided
// by the boundary pixel count; 0 with zero gradient when there is no boundary.
// The gradient flows through T^s only.
ValueGrad btm_loss(const Grid& pred, const ModalityStack& stack, std::size_t k, double alpha);

// Same loss with the boundary mask and appearance field supplied, so both stay
// constant while `pred` is perturbed.
ValueGrad btm_loss_fixed(const Grid& pred, const Grid& mask, const TextureField& appearance);

struct PairGrad {
  double value = 0.0;
  Grid grad_main;
  Grid grad_ref;
};

// Mean squared difference between `main` and `ref` bilinearly resized to
// main's size. Gradients reach both inputs, through the resize for `ref`.
PairGrad ms_loss(const Grid& main, const Grid& ref);

// Predictions and appearance at the main and reference scales.
struct DualScale {
  const Grid& pred_main;
  const Grid& pred_ref;
  const ModalityStack& stack_main;
  const ModalityStack& stack_ref;
};

struct TotalLoss {
  LossReport report;
  Grid grad_main;
  Grid grad_ref;
};

// lambda_c (csd + csd_ref) + lambda_b (btm + btm_ref) + lambda_m ms.
TotalLoss total_loss(const DualScale& inputs, const LossWeights& weights, double rho, std::size_t k,
                     double alpha);

// 1 - sum(p g) / sum(p + g - p g); 0 when the union is empty.
ValueGrad iou_loss(const Grid& pred, const Grid& label);

// Mean binary cross-entropy against a binary label. Predictions are clamped
// to [1e-12, 1 - 1e-12] inside the logarithms.
ValueGrad bce_loss(const Grid& pred, const Grid& label);

enum class LandscapeLoss { Csd, L1, Bce };

std::string_view landscape_loss_name(LandscapeLoss loss);
LandscapeLoss parse_landscape_loss(std::string_view name);

struct LandscapeRow {
  LandscapeLoss loss;
  double rho;
  double p;
  double value;
  double grad;
};

// One row per (loss, rho, p), in that nesting order. BCE uses the 0.5-binarised
// prediction as its own label; L1 measures |p - 0.5|.
std::vector<LandscapeRow> landscape_export(const std::vector<LandscapeLoss>& losses,
                                           const std::vector<double>& rhos, const std::vector<double>& ps);

// Header `loss,rho,p,value,grad`, then one row per entry with 17 significant digits.
void write_landscape_csv(std::ostream& out, const std::vector<LandscapeRow>& rows);

// Formats a double with 17 significant digits.
std::string format_g17(double v);

}  // namespace saldist
