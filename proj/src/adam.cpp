// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fp8lab {

const char* moment_format_str(MomentFormat f) {
  switch (f) {
    case MomentFormat::fp32: return "fp32";
    case MomentFormat::fp16: return "fp16";
    case MomentFormat::e4m3: return "e4m3";
    case MomentFormat::e5m2: return "e5m2";
  }
  return "?";
}

MomentFormat moment_format_from_str(const std::string& s) {
  if (s == "fp32" || s == "FP32") return MomentFormat::fp32;
  if (s == "fp16" || s == "FP16") return MomentFormat::fp16;
  if (s == "e4m3" || s == "E4M3") return MomentFormat::e4m3;
  if (s == "e5m2" || s == "E5M2") return MomentFormat::e5m2;
  throw std::invalid_argument("unknown moment format: " + s);
}

namespace {

const FormatSpec* quant_spec(MomentFormat f) {
  switch (f) {
    case MomentFormat::fp32: return nullptr;
    case MomentFormat::fp16: return &FormatSpec::get(FormatName::fp16);
    case MomentFormat::e4m3: return &FormatSpec::get(FormatName::e4m3);
    case MomentFormat::e5m2: return &FormatSpec::get(FormatName::e5m2);
  }
  return nullptr;
}

double bytes_per_param(MomentFormat f) {
  switch (f) {
    case MomentFormat::fp32: return 4;
    case MomentFormat::fp16: return 2;
    case MomentFormat::e4m3:
    case MomentFormat::e5m2: return 1;
  }
  return 0;
}

}  // namespace

AdamState AdamState::init(std::size_t n, const AdamConfig& cfg) {
  AdamState st;
  if (cfg.m_format == MomentFormat::fp32) {
    st.m_wide.assign(n, 0.0);
  } else {
    st.m_q = moment_quantize(std::vector<double>(n, 0.0),
                             *quant_spec(cfg.m_format));
  }
  if (cfg.v_format == MomentFormat::fp32) {
    st.v_wide.assign(n, 0.0);
  } else {
    st.v_q = moment_quantize(std::vector<double>(n, 0.0),
                             *quant_spec(cfg.v_format));
  }
  return st;
}

std::size_t AdamState::size() const {
  return m_wide.empty() ? m_q.size() : m_wide.size();
}

std::vector<double> AdamState::m_values(const AdamConfig& cfg) const {
  if (cfg.m_format == MomentFormat::fp32) return m_wide;
  return dequantize(m_q);
}

std::vector<double> AdamState::v_values(const AdamConfig& cfg) const {
  if (cfg.v_format == MomentFormat::fp32) return v_wide;
  return dequantize(v_q);
}

ScaledTensor moment_quantize(std::span<const double> moment,
                             const FormatSpec& fmt) {
  const double scale = jit_scale(moment, fmt, 1.0);
  return quantize(moment, {moment.size()}, scale, fmt);
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& st,
               const AdamConfig& cfg, double lr) {
  const std::size_t n = params.size();
  if (grads.size() != n)
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  if (st.size() != n)
    throw std::invalid_argument("adam_step: state size mismatch");
  if (!grads.all_finite())
    throw std::runtime_error("adam_step: non-finite gradients (divergence)");

  std::vector<double> m = st.m_values(cfg);
  std::vector<double> v = st.v_values(cfg);

  st.step += 1;
  const double t = double(st.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  const bool fp16_master = cfg.master == MasterFormat::fp16;
  const FormatSpec& half = FormatSpec::get(FormatName::fp16);

  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    double w = params[i];
    if (cfg.weight_decay != 0.0) w -= lr * cfg.weight_decay * w;
    w -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    if (fp16_master) w = decode_bits(encode_bits(w, half), half);
    params[i] = w;
  }

  if (cfg.m_format == MomentFormat::fp32) {
    st.m_wide = std::move(m);
  } else {
    st.m_q = moment_quantize(m, *quant_spec(cfg.m_format));
    st.m_stats.saturated += st.m_q.stats.saturated;
    st.m_stats.underflowed_to_zero += st.m_q.stats.underflowed_to_zero;
  }
  if (cfg.v_format == MomentFormat::fp32) {
    st.v_wide = std::move(v);
  } else {
    st.v_q = moment_quantize(v, *quant_spec(cfg.v_format));
    st.v_stats.saturated += st.v_q.stats.saturated;
    st.v_stats.underflowed_to_zero += st.v_q.stats.underflowed_to_zero;
  }
}

MemoryReport memory_report(std::uint64_t n_params, const AdamConfig& cfg,
                           std::uint64_t n_tensors) {
  MemoryReport r;
  r.master_bytes_per_param = cfg.master == MasterFormat::fp32 ? 4 : 2;
  r.m_bytes_per_param = bytes_per_param(cfg.m_format);
  r.v_bytes_per_param = bytes_per_param(cfg.v_format);
  r.total_bytes_per_param = r.master_bytes_per_param + r.m_bytes_per_param +
                            r.v_bytes_per_param;
  r.master_bytes = std::uint64_t(r.master_bytes_per_param * double(n_params));
  r.m_bytes = std::uint64_t(r.m_bytes_per_param * double(n_params));
  r.v_bytes = std::uint64_t(r.v_bytes_per_param * double(n_params));
  const std::uint64_t quantized_moment_tensors =
      (cfg.m_format != MomentFormat::fp32 ? n_tensors : 0) +
      (cfg.v_format != MomentFormat::fp32 ? n_tensors : 0);
  r.scale_bytes = 8 * quantized_moment_tensors;
  r.total_bytes = r.master_bytes + r.m_bytes + r.v_bytes + r.scale_bytes;
  return r;
}

}  // namespace fp8lab
