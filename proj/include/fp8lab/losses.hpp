// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "fp8lab/tensor.hpp"

namespace fp8lab {

struct LossResult {
  double value = 0.0;
  Tensor dinput;  // gradient w.r.t. the loss input (logits / prediction)
};

// Mean token cross-entropy over [tokens x vocab] logits, log-sum-exp
// stabilized. dinput = (softmax - onehot) / tokens.
LossResult cross_entropy(const Tensor& logits, std::span<const int> targets);

// 0.5 * mean over tokens of ||pred - target||^2.
LossResult squared_error(const Tensor& pred, const Tensor& target);

// Coupled l2 regularization: value (mu/2) * sum ||w||^2, gradient mu * w.
double l2_penalty(std::span<const Tensor* const> params, double mu);
void add_l2_penalty_grad(const Tensor& w, double mu, Tensor& grad);

}  // namespace fp8lab
