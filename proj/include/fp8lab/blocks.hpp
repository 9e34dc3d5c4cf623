// SPDX-License-Identifier: Apache-2.0
//
// Gated MLP blocks. A SwiGLU channel i computes
//   u_i = (x . w1_i) * swish(x . w2_i)
// which is quadratic in the input magnitude once w1 and w2 align. The
// smooth variant multiplies each channel by a scale s_i before the output
// quantizer and divides it back out when the result enters the w3 matmul,
// which leaves the function unchanged but keeps every channel inside the
// quantizer's range. GeluBlock is the two-matrix control with the same
// quantization plumbing.

#pragma once

#include <string>

#include "fp8lab/linear.hpp"
#include "fp8lab/quant_context.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

double sigmoid(double z);
double swish(double z);           // z * sigmoid(z)
double swish_grad(double z);      // sigmoid(z) + z * sigmoid'(z)
double gelu(double z);            // exact erf form
double gelu_grad(double z);

// What happens to the gate output before the w3 matmul. per_channel uses
// E4M3 under the FP8 policy and BF16 under the BF16 policy.
enum class SwigluOutQuant { wide, bf16_unit, e4m3_delayed, per_channel };

struct PrecisionPolicy {
  QuantPolicyMode matmul_io = QuantPolicyMode::none;
  SwigluOutQuant swiglu_out = SwigluOutQuant::wide;
};

struct SwiGluBlock {
  Tensor w1;  // [d x h], linear branch, column i is channel i
  Tensor w2;  // [d x h], gate branch
  Tensor w3;  // [h x d_out]
  // Scales last used by the smooth path (refreshed by forward).
  ChannelScales channel_scales;

  struct Cache {
    Tensor x_used, w1_used, w2_used, w3_used;
    Tensor pre1, pre2;
    Tensor u_raw;   // gate output before the quantizer
    Tensor u_used;  // w3 input actually used (post-quantizer, rescaled)
  };

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t hidden() const { return w1.cols(); }
  std::size_t out_dim() const { return w3.cols(); }

  Tensor forward(const Tensor& x, const PrecisionPolicy& pol,
                 QuantContext& qc, const std::string& tag, Cache* cache);

  struct Grads {
    Tensor dw1, dw2, dw3;
  };
  // Returns dx.
  Tensor backward(const Tensor& dy, const Cache& cache,
                  const PrecisionPolicy& pol, QuantContext& qc,
                  const std::string& tag, Grads& grads) const;
};

// Wide-precision evaluation, no quantization, no scaling.
Tensor swiglu_eval(const Tensor& x, const SwiGluBlock& blk);

// Smooth evaluation with explicit per-channel scales: each channel is
// multiplied by s_i, optionally quantized to E4M3, divided by s_i again
// and fed to w3 (taken wide here). With quantize_out=false the quantizer
// is the identity and the result equals swiglu_eval up to wide-precision
// rounding.
Tensor smooth_swiglu_eval(const Tensor& x, const SwiGluBlock& blk,
                          const ChannelScales& scales, bool quantize_out,
                          QuantStats* stats = nullptr);

// Scale folding for inference: w1 column i absorbs s_i, w3 row i absorbs
// 1/s_i, so no runtime scaling remains.
void fold_scales_exact(const SwiGluBlock& blk, const ChannelScales& scales,
                       Tensor& w1_folded, Tensor& w3_folded);

// Quantized folding. Each folded weight is quantized per channel (w1 by
// column, w3 by row) with power-of-two just-in-time scales, so folded
// inference tracks the runtime-scaled block to within one quantization
// step per element. Note w3's scales are per ROW; use w3_values() rather
// than dequantize() on that record.
struct FoldedWeights {
  ScaledTensor w1;  // Q(s_i * w1_i), one scale per column
  ScaledTensor w3;  // Q(s_i^{-1} * w3_i), one scale per row

  Tensor w1_values() const;
  Tensor w3_values() const;
};
FoldedWeights fold_scales(const SwiGluBlock& blk, const ChannelScales& scales,
                          const FormatSpec& fmt);

struct GeluBlock {
  Tensor wa;  // [d x h]
  Tensor wb;  // [h x d_out]

  struct Cache {
    Tensor x_used, wa_used, wb_used;
    Tensor pre;
    Tensor a_used;
  };

  std::size_t in_dim() const { return wa.rows(); }
  std::size_t hidden() const { return wa.cols(); }
  std::size_t out_dim() const { return wb.cols(); }

  Tensor forward(const Tensor& x, const PrecisionPolicy& pol,
                 QuantContext& qc, const std::string& tag, Cache* cache) const;

  struct Grads {
    Tensor dwa, dwb;
  };
  Tensor backward(const Tensor& dy, const Cache& cache,
                  const PrecisionPolicy& pol, QuantContext& qc,
                  const std::string& tag, Grads& grads) const;
};

}  // namespace fp8lab
