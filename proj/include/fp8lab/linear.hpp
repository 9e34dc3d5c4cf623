// SPDX-License-Identifier: Apache-2.0
//
// Dense layer with master weights kept in wide precision. Quantization is
// applied at use time per the active policy and never destructively: the
// forward path sees E4M3 copies (activations under their delayed scale,
// weights just-in-time), the backward path quantizes incoming gradients
// to E5M2 before both matmuls. Accumulation is always wide.

#pragma once

#include <optional>
#include <string>

#include "fp8lab/quant_context.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

enum class QuantPolicyMode { none, bf16, fp8_hybrid };

struct LinearLayer {
  Tensor W;  // [out x in]
  std::optional<Tensor> bias;
};

struct LinearCache {
  Tensor x_used;
  Tensor w_used;
};

struct LinearGrads {
  Tensor dW;
  std::optional<Tensor> dbias;
};

// y = x W^T (+ bias), x is [tokens x in].
Tensor linear_forward(const Tensor& x, const LinearLayer& layer,
                      QuantPolicyMode mode, QuantContext& qc,
                      const std::string& tag, LinearCache* cache = nullptr);

// Returns dx; fills grads. dW accumulates in wide precision.
Tensor linear_backward(const Tensor& dy, const LinearCache& cache,
                       const LinearLayer& layer, QuantPolicyMode mode,
                       QuantContext& qc, const std::string& tag,
                       LinearGrads& grads);

}  // namespace fp8lab
