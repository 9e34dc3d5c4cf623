// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checking. The loss callback must evaluate
// the full scalar loss for the current parameter values; parameters are
// perturbed in place, one scalar at a time, and restored afterwards.

#pragma once

#include <functional>
#include <span>

#include "fp8lab/tensor.hpp"

namespace fp8lab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;  // index into the params span
  std::size_t worst_elem = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<Tensor* const> params,
                           std::span<const Tensor* const> analytic_grads,
                           double epsilon = 1e-5);

}  // namespace fp8lab
