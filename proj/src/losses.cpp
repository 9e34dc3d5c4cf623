// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fp8lab {

LossResult cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n)
    throw std::invalid_argument("cross_entropy: one target per row required");
  LossResult res;
  res.dinput = Tensor({n, v});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || std::size_t(t) >= v)
      throw std::invalid_argument("cross_entropy: target out of range");
    const double* row = &logits.data[i * v];
    double m = row[0];
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    total += lse - row[std::size_t(t)];
    double* drow = &res.dinput.data[i * v];
    for (std::size_t j = 0; j < v; ++j)
      drow[j] = std::exp(row[j] - lse) / double(n);
    drow[std::size_t(t)] -= 1.0 / double(n);
  }
  res.value = total / double(n);
  return res;
}

LossResult squared_error(const Tensor& pred, const Tensor& target) {
  if (pred.shape != target.shape)
    throw std::invalid_argument("squared_error: shape mismatch");
  const std::size_t n = pred.rows();
  LossResult res;
  res.dinput = Tensor(pred.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    total += d * d;
    res.dinput[i] = d / double(n);
  }
  res.value = 0.5 * total / double(n);
  return res;
}

double l2_penalty(std::span<const Tensor* const> params, double mu) {
  if (mu < 0.0) throw std::invalid_argument("mu must be nonnegative");
  double s = 0.0;
  for (const Tensor* w : params)
    for (double v : w->data) s += v * v;
  return 0.5 * mu * s;
}

void add_l2_penalty_grad(const Tensor& w, double mu, Tensor& grad) {
  if (mu < 0.0) throw std::invalid_argument("mu must be nonnegative");
  if (grad.shape != w.shape)
    throw std::invalid_argument("l2 grad shape mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) grad[i] += mu * w[i];
}

}  // namespace fp8lab
