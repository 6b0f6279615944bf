#include "saldist/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "saldist/errors.hpp"

namespace saldist {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_rho(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ParameterError("rho must lie in [0, 1], got " + format_g17(rho));
}

void require_binary(const Grid& label, const std::string& what) {
  for (double v : label.values()) {
    if (v != 0.0 && v != 1.0) throw ValidationError(what + ": label values must be 0 or 1");
  }
}

// Re-raises library errors with the failing component's name prefixed.
template <typename F>
auto in_component(std::string_view component, F&& f) {
  const std::string prefix = std::string(component) + ": ";
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(prefix + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.what());
  }
}

}  // namespace

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void LossWeights::validate() const {
  if (!(confidence >= 0.0 && boundary >= 0.0 && multiscale >= 0.0)) {
    throw ParameterError("loss weights must be non-negative");
  }
}

double csd_exponent(double rho) { return std::exp2(1.0 - rho); }

ValueGrad csd_summand(double p, double rho) {
  require_rho(rho);
  const double k = p - 0.5;
  const double e = csd_exponent(rho);
  const double mag = std::abs(k);
  ValueGrad out;
  out.value = -std::pow(mag, e);
  out.gradient = Grid(Shape{1, 1, 1}, k == 0.0 ? 0.0 : -sign(k) * e * std::pow(mag, e - 1.0));
  return out;
}

ValueGrad csd_loss(const Grid& pred, double rho) {
  require_single_channel(pred, "csd_loss");
  require_rho(rho);
  const double e = csd_exponent(rho);
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  ValueGrad out{0.0, Grid(pred.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double k = pred[i] - 0.5;
    const double mag = std::abs(k);
    acc += std::pow(mag, e);
    if (k != 0.0) out.gradient[i] = -inv_n * sign(k) * e * std::pow(mag, e - 1.0);
  }
  out.value = -acc * inv_n;
  return out;
}

ValueGrad btm_loss_fixed(const Grid& pred, const Grid& mask, const TextureField& appearance) {
  require_single_channel(pred, "btm_loss");
  require_shape(mask.shape(), pred.shape(), "btm_loss boundary mask");
  if (appearance.height() != pred.height() || appearance.width() != pred.width()) {
    throw ShapeError("btm_loss: appearance texture is " + std::to_string(appearance.height()) + "x" +
                     std::to_string(appearance.width()) + ", prediction is " + pred.shape().str());
  }
  ValueGrad out{0.0, Grid(pred.shape())};
  const double boundary = mask.sum();
  if (boundary == 0.0) return out;
  const double inv_b = 1.0 / boundary;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double bi = mask[i];
    for (std::size_t s = 0; s < appearance.slots(); ++s) {
      if (!appearance.valid(i, s)) continue;
      const std::size_t j = appearance.neighbour(i, s);
      const double d = pred[i] - pred[j];
      const double ta = appearance.entry(i, s);
      acc += bi * std::abs(d) * ta;
      const double g = bi * sign(d) * ta * inv_b;
      out.gradient[i] += g;
      out.gradient[j] -= g;
    }
  }
  out.value = acc * inv_b;
  return out;
}

ValueGrad btm_loss(const Grid& pred, const ModalityStack& stack, std::size_t k, double alpha) {
  require_single_channel(pred, "btm_loss");
  if (stack.height() != pred.height() || stack.width() != pred.width()) {
    throw ShapeError("btm_loss: appearance stack is " + stack.planes().shape().str() + ", prediction is " +
                     pred.shape().str());
  }
  const Grid mask = boundary_mask(pred);
  if (mask.sum() == 0.0) {
    TextureField probe(pred.height(), pred.width(), k);  // validates k
    return ValueGrad{0.0, Grid(pred.shape())};
  }
  return btm_loss_fixed(pred, mask, texture_appearance(stack, k, alpha));
}

PairGrad ms_loss(const Grid& main, const Grid& ref) {
  require_single_channel(main, "ms_loss main prediction");
  require_single_channel(ref, "ms_loss reference prediction");
  const Grid resized = resize_bilinear(ref, main.height(), main.width());
  const double inv_n = 1.0 / static_cast<double>(main.size());
  PairGrad out{0.0, Grid(main.shape()), Grid()};
  double acc = 0.0;
  for (std::size_t i = 0; i < main.size(); ++i) {
    const double d = main[i] - resized[i];
    acc += d * d;
    out.grad_main[i] = 2.0 * d * inv_n;
  }
  out.value = acc * inv_n;
  Grid seed = out.grad_main;
  seed *= -1.0;
  out.grad_ref = resize_bilinear_backward(seed, ref.shape());
  return out;
}

TotalLoss total_loss(const DualScale& in, const LossWeights& weights, double rho, std::size_t k, double alpha) {
  weights.validate();
  const ValueGrad csd_main = in_component("csd_main", [&] { return csd_loss(in.pred_main, rho); });
  const ValueGrad csd_ref = in_component("csd_ref", [&] { return csd_loss(in.pred_ref, rho); });
  const ValueGrad btm_main =
      in_component("btm_main", [&] { return btm_loss(in.pred_main, in.stack_main, k, alpha); });
  const ValueGrad btm_ref = in_component("btm_ref", [&] { return btm_loss(in.pred_ref, in.stack_ref, k, alpha); });
  const PairGrad ms = in_component("ms", [&] { return ms_loss(in.pred_main, in.pred_ref); });

  TotalLoss out;
  LossReport& r = out.report;
  r.csd_main = csd_main.value;
  r.csd_ref = csd_ref.value;
  r.btm_main = btm_main.value;
  r.btm_ref = btm_ref.value;
  r.ms = ms.value;
  r.rho = rho;
  r.total = weights.confidence * (r.csd_main + r.csd_ref) + weights.boundary * (r.btm_main + r.btm_ref) +
            weights.multiscale * r.ms;

  out.grad_main = Grid(in.pred_main.shape());
  out.grad_ref = Grid(in.pred_ref.shape());
  for (std::size_t i = 0; i < out.grad_main.size(); ++i) {
    out.grad_main[i] = weights.confidence * csd_main.gradient[i] + weights.boundary * btm_main.gradient[i] +
                       weights.multiscale * ms.grad_main[i];
  }
  for (std::size_t i = 0; i < out.grad_ref.size(); ++i) {
    out.grad_ref[i] = weights.confidence * csd_ref.gradient[i] + weights.boundary * btm_ref.gradient[i] +
                      weights.multiscale * ms.grad_ref[i];
  }
  return out;
}

ValueGrad iou_loss(const Grid& pred, const Grid& label) {
  require_shape(label.shape(), pred.shape(), "iou_loss label");
  require_binary(label, "iou_loss");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * label[i];
    uni += pred[i] + label[i] - pred[i] * label[i];
  }
  ValueGrad out{0.0, Grid(pred.shape())};
  if (uni == 0.0) return out;
  out.value = 1.0 - inter / uni;
  const double inv_u2 = 1.0 / (uni * uni);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.gradient[i] = -(label[i] * uni - inter * (1.0 - label[i])) * inv_u2;
  }
  return out;
}

ValueGrad bce_loss(const Grid& pred, const Grid& label) {
  require_shape(label.shape(), pred.shape(), "bce_loss label");
  require_binary(label, "bce_loss");
  constexpr double kFloor = 1e-12;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  ValueGrad out{0.0, Grid(pred.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kFloor, 1.0 - kFloor);
    const double g = label[i];
    acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    out.gradient[i] = inv_n * (-g / p + (1.0 - g) / (1.0 - p));
  }
  out.value = acc * inv_n;
  return out;
}

std::string_view landscape_loss_name(LandscapeLoss loss) {
  switch (loss) {
    case LandscapeLoss::Csd: return "csd";
    case LandscapeLoss::L1: return "l1";
    case LandscapeLoss::Bce: return "bce";
  }
  return "unknown";
}

LandscapeLoss parse_landscape_loss(std::string_view name) {
  for (LandscapeLoss l : {LandscapeLoss::Csd, LandscapeLoss::L1, LandscapeLoss::Bce})
    if (landscape_loss_name(l) == name) return l;
  throw ParameterError("unknown landscape loss '" + std::string(name) + "' (expected csd, l1 or bce)");
}

std::vector<LandscapeRow> landscape_export(const std::vector<LandscapeLoss>& losses,
                                           const std::vector<double>& rhos, const std::vector<double>& ps) {
  for (double p : ps) {
    if (!(p > 0.0 && p < 1.0)) throw ParameterError("landscape samples must lie in (0, 1), got " + format_g17(p));
  }
  for (double rho : rhos) require_rho(rho);
  std::vector<LandscapeRow> rows;
  rows.reserve(losses.size() * rhos.size() * ps.size());
  for (LandscapeLoss loss : losses) {
    for (double rho : rhos) {
      for (double p : ps) {
        LandscapeRow row{loss, rho, p, 0.0, 0.0};
        switch (loss) {
          case LandscapeLoss::Csd: {
            const ValueGrad s = csd_summand(p, rho);
            row.value = s.value;
            row.grad = s.gradient[0];
            break;
          }
          case LandscapeLoss::L1:
            row.value = std::abs(p - 0.5);
            row.grad = sign(p - 0.5);
            break;
          case LandscapeLoss::Bce: {
            const double g = p > 0.5 ? 1.0 : 0.0;
            row.value = -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
            row.grad = -g / p + (1.0 - g) / (1.0 - p);
            break;
          }
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void write_landscape_csv(std::ostream& out, const std::vector<LandscapeRow>& rows) {
  out << "loss,rho,p,value,grad\n";
  for (const LandscapeRow& r : rows) {
    out << landscape_loss_name(r.loss) << ',' << format_g17(r.rho) << ',' << format_g17(r.p) << ','
        << format_g17(r.value) << ',' << format_g17(r.grad) << '\n';
  }
}

}  // namespace saldist
