#include "saldist/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "saldist/errors.hpp"

namespace saldist {

double grad_check(const ScalarFn& f, const Grid& point, const Grid& analytic, double eps) {
  if (!(eps > 0.0)) throw ParameterError("grad_check eps must be positive");
  require_shape(analytic.shape(), point.shape(), "grad_check analytic gradient");
  Grid probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + eps;
    const double up = f(probe);
    probe[i] = original - eps;
    const double down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("grad_check: non-finite function value at element " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const std::function<ValueGrad(const Grid&)>& f, const Grid& point, double eps) {
  const ValueGrad at = f(point);
  if (!std::isfinite(at.value)) throw NumericalError("grad_check: non-finite function value at point");
  return grad_check([&](const Grid& g) { return f(g).value; }, point, at.gradient, eps);
}

}  // namespace saldist
