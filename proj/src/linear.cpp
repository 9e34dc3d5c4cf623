// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/linear.hpp"

#include <stdexcept>

namespace fp8lab {

namespace {

Tensor route_forward_act(const Tensor& t, QuantPolicyMode mode,
                         QuantContext& qc, const std::string& tag) {
  switch (mode) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_delayed(tag, t, FormatName::e4m3);
  }
  throw std::invalid_argument("bad quant policy");
}

Tensor route_forward_weight(const Tensor& t, QuantPolicyMode mode,
                            QuantContext& qc, const std::string& tag) {
  switch (mode) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_jit(tag, t, FormatName::e4m3);
  }
  throw std::invalid_argument("bad quant policy");
}

Tensor route_backward_grad(const Tensor& t, QuantPolicyMode mode,
                           QuantContext& qc, const std::string& tag) {
  switch (mode) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_delayed(tag, t, FormatName::e5m2);
  }
  throw std::invalid_argument("bad quant policy");
}

}  // namespace

Tensor linear_forward(const Tensor& x, const LinearLayer& layer,
                      QuantPolicyMode mode, QuantContext& qc,
                      const std::string& tag, LinearCache* cache) {
  if (x.cols() != layer.W.cols())
    throw std::invalid_argument("linear_forward: input width mismatch");
  Tensor xq = route_forward_act(x, mode, qc, tag + ".x");
  Tensor wq = route_forward_weight(layer.W, mode, qc, tag + ".w");
  Tensor y = matmul_bt(xq, wq);
  if (layer.bias) {
    if (layer.bias->size() != y.cols())
      throw std::invalid_argument("linear_forward: bias size mismatch");
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j)
        y(i, j) += (*layer.bias)[j];
  }
  if (cache) {
    cache->x_used = std::move(xq);
    cache->w_used = std::move(wq);
  }
  return y;
}

Tensor linear_backward(const Tensor& dy, const LinearCache& cache,
                       const LinearLayer& layer, QuantPolicyMode mode,
                       QuantContext& qc, const std::string& tag,
                       LinearGrads& grads) {
  if (dy.cols() != layer.W.rows())
    throw std::invalid_argument("linear_backward: grad width mismatch");
  Tensor dyq = route_backward_grad(dy, mode, qc, tag + ".dy");
  grads.dW = matmul_ta(dyq, cache.x_used);
  if (layer.bias) {
    Tensor db({dy.cols()});
    // bias gradient is a plain reduction, kept wide
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) db[j] += dy(i, j);
    grads.dbias = std::move(db);
  } else {
    grads.dbias.reset();
  }
  return matmul(dyq, cache.w_used);
}

}  // namespace fp8lab
