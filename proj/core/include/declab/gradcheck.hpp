#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "declab/errors.hpp"

namespace declab {

// Central-difference gradient estimate of f at theta:
//   g[i] = (f(theta + step*e_i) - f(theta - step*e_i)) / (2*step)
// Independent of the tape machinery; this is the oracle the reverse-mode
// engine is checked against. Run it in double.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> theta,
    double step) {
  if (step <= 0.0) throw ContractError("finite_difference_gradient: step must be > 0");
  std::vector<double> grad(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    double saved = theta[i];
    theta[i] = saved + step;
    double fp = f(theta);
    theta[i] = saved - step;
    double fm = f(theta);
    theta[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_difference_gradient: non-finite function value");
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// Largest relative error between an analytic gradient and a reference,
// with an absolute floor to avoid blowing up near-zero entries.
inline double max_relative_error(const std::vector<double>& got, const std::vector<double>& want,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    double denom = std::max({std::abs(got[i]), std::abs(want[i]), floor});
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace declab
