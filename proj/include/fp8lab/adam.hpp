// SPDX-License-Identifier: Apache-2.0
//
// Adam with configurable moment storage. Moments can live in wide
// precision ("fp32", the reference path) or be re-quantized after every
// step to FP16 / E4M3 / E5M2 with fresh just-in-time per-tensor scales.
// The second moment is the delicate one: its smallest values drive the
// inverse-square-root update, so narrow-range storage flushes them to
// zero first; the underflow counters below make that observable.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fp8lab/scaling.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

enum class MomentFormat { fp32, fp16, e4m3, e5m2 };
enum class MasterFormat { fp32, fp16 };

const char* moment_format_str(MomentFormat f);
MomentFormat moment_format_from_str(const std::string& s);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  MomentFormat m_format = MomentFormat::fp32;
  MomentFormat v_format = MomentFormat::fp32;
  MasterFormat master = MasterFormat::fp32;
  // Decoupled weight decay applied by the optimizer (0 = off). Coupled l2
  // belongs in the loss gradient instead.
  double weight_decay = 0.0;
};

// Per-parameter-tensor state. Wide staging is used for fp32 moments; the
// quantized formats keep codes plus a per-tensor scale.
struct AdamState {
  std::vector<double> m_wide, v_wide;
  ScaledTensor m_q, v_q;
  std::int64_t step = 0;
  QuantStats m_stats, v_stats;  // cumulative over the run

  static AdamState init(std::size_t n, const AdamConfig& cfg);
  std::size_t size() const;

  // Dequantized views of the stored moments.
  std::vector<double> m_values(const AdamConfig& cfg) const;
  std::vector<double> v_values(const AdamConfig& cfg) const;
};

// Quantize one moment tensor with a fresh just-in-time per-tensor scale.
ScaledTensor moment_quantize(std::span<const double> moment,
                             const FormatSpec& fmt);

// One bias-corrected Adam update. params are the master weights; with an
// fp16 master they are re-encoded (scale 1) after the update. Throws on
// non-finite gradients.
void adam_step(Tensor& params, const Tensor& grads, AdamState& st,
               const AdamConfig& cfg, double lr);

struct MemoryReport {
  double master_bytes_per_param = 0;
  double m_bytes_per_param = 0;
  double v_bytes_per_param = 0;
  double total_bytes_per_param = 0;
  std::uint64_t master_bytes = 0;
  std::uint64_t m_bytes = 0;
  std::uint64_t v_bytes = 0;
  std::uint64_t scale_bytes = 0;  // one f64 per quantized moment tensor
  std::uint64_t total_bytes = 0;
};

// Analytic optimizer-state byte accounting for n_params parameters split
// across n_tensors tensors.
MemoryReport memory_report(std::uint64_t n_params, const AdamConfig& cfg,
                           std::uint64_t n_tensors = 1);

}  // namespace fp8lab
