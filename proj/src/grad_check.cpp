// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace fp8lab {

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic_grads,
                           double epsilon) {
  if (params.size() != analytic_grads.size())
    throw std::invalid_argument("grad_check: one gradient per parameter");
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = *analytic_grads[p];
    if (g.shape != w.shape)
      throw std::invalid_argument("grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + epsilon;
      const double up = loss();
      w[i] = orig - epsilon;
      const double down = loss();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = g[i];
      const double denom =
          std::max(1.0, std::max(std::fabs(numeric), std::fabs(analytic)));
      const double rel = std::fabs(numeric - analytic) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p;
        res.worst_elem = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace fp8lab
