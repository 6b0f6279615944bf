#pragma once

#include <functional>

#include "saldist/grid.hpp"

namespace saldist {

// A scalar value together with its gradient with respect to some Grid.
struct ValueGrad {
  double value = 0.0;
  Grid gradient;
};

using ScalarFn = std::function<double(const Grid&)>;

// Max over elements of |analytic - central difference| / max(1e-8, |central difference|),
// perturbing each element of `point` by +-eps. Throws NumericalError if f is
// non-finite at any probe.
double grad_check(const ScalarFn& f, const Grid& point, const Grid& analytic, double eps);

// Convenience form: `f` supplies both the value and its analytic gradient.
double grad_check(const std::function<ValueGrad(const Grid&)>& f, const Grid& point, double eps);

}  // namespace saldist
