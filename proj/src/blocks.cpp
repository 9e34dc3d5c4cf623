// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/blocks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fp8lab {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double swish(double z) { return z * sigmoid(z); }

double swish_grad(double z) {
  const double s = sigmoid(z);
  return s + z * s * (1.0 - s);
}

double gelu(double z) {
  return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2));
}

double gelu_grad(double z) {
  const double phi = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
  const double pdf =
      std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return phi + z * pdf;
}

namespace {

Tensor fq_act(const Tensor& t, const PrecisionPolicy& p, QuantContext& qc,
              const std::string& tag) {
  switch (p.matmul_io) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_delayed(tag, t, FormatName::e4m3);
  }
  throw std::invalid_argument("bad policy");
}

Tensor fq_weight(const Tensor& t, const PrecisionPolicy& p, QuantContext& qc,
                 const std::string& tag) {
  switch (p.matmul_io) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_jit(tag, t, FormatName::e4m3);
  }
  throw std::invalid_argument("bad policy");
}

Tensor fq_grad(const Tensor& t, const PrecisionPolicy& p, QuantContext& qc,
               const std::string& tag) {
  switch (p.matmul_io) {
    case QuantPolicyMode::none: return t;
    case QuantPolicyMode::bf16: return qc.fake_quant_unit(tag, t, FormatName::bf16);
    case QuantPolicyMode::fp8_hybrid:
      return qc.fake_quant_delayed(tag, t, FormatName::e5m2);
  }
  throw std::invalid_argument("bad policy");
}

// Gate-output routing. In per-channel (smooth) mode the dequantization
// already divides channel i by s_i, so the returned tensor feeds the w3
// matmul directly; that is the fold point for s^-1.
Tensor fq_gate_out(const Tensor& u, const PrecisionPolicy& p,
                   QuantContext& qc, const std::string& tag,
                   ChannelScales* scales_used) {
  switch (p.swiglu_out) {
    case SwigluOutQuant::wide:
      if (scales_used) scales_used->assign(u.cols(), 1.0);
      return u;
    case SwigluOutQuant::bf16_unit:
      if (scales_used) scales_used->assign(u.cols(), 1.0);
      return qc.fake_quant_unit(tag, u, FormatName::bf16);
    case SwigluOutQuant::e4m3_delayed:
      if (scales_used) scales_used->assign(u.cols(), 1.0);
      return qc.fake_quant_delayed(tag, u, FormatName::e4m3);
    case SwigluOutQuant::per_channel: {
      const FormatName f = p.matmul_io == QuantPolicyMode::bf16
                               ? FormatName::bf16
                               : FormatName::e4m3;
      return qc.fake_quant_per_channel(tag, u, f, scales_used);
    }
  }
  throw std::invalid_argument("bad gate-out mode");
}

}  // namespace

Tensor SwiGluBlock::forward(const Tensor& x, const PrecisionPolicy& pol,
                            QuantContext& qc, const std::string& tag,
                            Cache* cache) {
  if (x.cols() != in_dim())
    throw std::invalid_argument("swiglu forward: input width mismatch");
  Tensor xq = fq_act(x, pol, qc, tag + ".x");
  Tensor w1q = fq_weight(w1, pol, qc, tag + ".w1");
  Tensor w2q = fq_weight(w2, pol, qc, tag + ".w2");
  Tensor pre1 = matmul(xq, w1q);
  Tensor pre2 = matmul(xq, w2q);
  Tensor u({pre1.rows(), pre1.cols()});
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = pre1[i] * swish(pre2[i]);
  if (cache) cache->u_raw = u;
  Tensor uq = fq_gate_out(u, pol, qc, tag + ".u", &channel_scales);
  Tensor w3q = fq_weight(w3, pol, qc, tag + ".w3");
  Tensor y = matmul(uq, w3q);
  if (cache) {
    cache->x_used = std::move(xq);
    cache->w1_used = std::move(w1q);
    cache->w2_used = std::move(w2q);
    cache->w3_used = std::move(w3q);
    cache->pre1 = std::move(pre1);
    cache->pre2 = std::move(pre2);
    cache->u_used = std::move(uq);
  }
  return y;
}

Tensor SwiGluBlock::backward(const Tensor& dy, const Cache& cache,
                             const PrecisionPolicy& pol, QuantContext& qc,
                             const std::string& tag, Grads& grads) const {
  if (dy.cols() != out_dim())
    throw std::invalid_argument("swiglu backward: grad width mismatch");
  Tensor dyq = fq_grad(dy, pol, qc, tag + ".dy");
  grads.dw3 = matmul_ta(cache.u_used, dyq);
  // straight-through across the gate-output quantizer
  Tensor du = matmul_bt(dyq, cache.w3_used);
  const std::size_t m = du.size();
  Tensor dpre1({du.rows(), du.cols()});
  Tensor dpre2({du.rows(), du.cols()});
  for (std::size_t i = 0; i < m; ++i) {
    const double g = du[i];
    dpre1[i] = g * swish(cache.pre2[i]);
    dpre2[i] = g * cache.pre1[i] * swish_grad(cache.pre2[i]);
  }
  Tensor dpre1q = fq_grad(dpre1, pol, qc, tag + ".dpre1");
  Tensor dpre2q = fq_grad(dpre2, pol, qc, tag + ".dpre2");
  grads.dw1 = matmul_ta(cache.x_used, dpre1q);
  grads.dw2 = matmul_ta(cache.x_used, dpre2q);
  Tensor dx = matmul_bt(dpre1q, cache.w1_used);
  const Tensor dx2 = matmul_bt(dpre2q, cache.w2_used);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx2[i];
  return dx;
}

Tensor swiglu_eval(const Tensor& x, const SwiGluBlock& blk) {
  Tensor pre1 = matmul(x, blk.w1);
  Tensor pre2 = matmul(x, blk.w2);
  Tensor u({pre1.rows(), pre1.cols()});
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = pre1[i] * swish(pre2[i]);
  return matmul(u, blk.w3);
}

Tensor smooth_swiglu_eval(const Tensor& x, const SwiGluBlock& blk,
                          const ChannelScales& scales, bool quantize_out,
                          QuantStats* stats) {
  const std::size_t h = blk.hidden();
  if (scales.size() != h)
    throw std::invalid_argument("smooth swiglu: one scale per channel");
  for (double s : scales)
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::invalid_argument("smooth swiglu: scales must be positive");
  Tensor pre1 = matmul(x, blk.w1);
  Tensor pre2 = matmul(x, blk.w2);
  Tensor u({pre1.rows(), pre1.cols()});
  for (std::size_t n = 0; n < u.rows(); ++n)
    for (std::size_t c = 0; c < h; ++c)
      u(n, c) = scales[c] * (pre1(n, c) * swish(pre2(n, c)));
  if (quantize_out) {
    ScaledTensor st =
        quantize(u.span(), u.shape, 1.0, FormatSpec::get(FormatName::e4m3));
    dequantize_into(st, u.data);
    if (stats) *stats = st.stats;
  } else if (stats) {
    *stats = {};
  }
  for (std::size_t n = 0; n < u.rows(); ++n)
    for (std::size_t c = 0; c < h; ++c) u(n, c) /= scales[c];
  return matmul(u, blk.w3);
}

void fold_scales_exact(const SwiGluBlock& blk, const ChannelScales& scales,
                       Tensor& w1_folded, Tensor& w3_folded) {
  const std::size_t h = blk.hidden();
  if (scales.size() != h)
    throw std::invalid_argument("fold_scales: one scale per channel");
  w1_folded = blk.w1;
  w3_folded = blk.w3;
  for (std::size_t r = 0; r < blk.w1.rows(); ++r)
    for (std::size_t c = 0; c < h; ++c) w1_folded(r, c) *= scales[c];
  for (std::size_t c = 0; c < h; ++c)
    for (std::size_t j = 0; j < blk.w3.cols(); ++j)
      w3_folded(c, j) /= scales[c];
  if (!w1_folded.all_finite() || !w3_folded.all_finite())
    throw std::runtime_error(
        "fold_scales: folded weights are not finite; re-derive scales");
}

Tensor FoldedWeights::w1_values() const {
  Tensor t;
  t.shape = w1.shape;
  t.data = dequantize(w1);
  return t;
}

Tensor FoldedWeights::w3_values() const {
  // per-row scales: divide row c by scales[c]
  Tensor t;
  t.shape = w3.shape;
  t.data.resize(w3.codes.size());
  const FormatSpec& fmt = FormatSpec::get(w3.format);
  const std::size_t rows = w3.shape.at(0), cols = w3.shape.at(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j)
      t.data[r * cols + j] =
          decode_bits(w3.codes[r * cols + j], fmt) / w3.scales[r];
  return t;
}

FoldedWeights fold_scales(const SwiGluBlock& blk, const ChannelScales& scales,
                          const FormatSpec& fmt) {
  Tensor w1f, w3f;
  fold_scales_exact(blk, scales, w1f, w3f);
  const std::size_t d = w1f.rows(), h = w1f.cols();
  const std::size_t dout = w3f.cols();

  // per-column pow2 jit scales for w1
  ChannelScales s1(h, 1.0);
  for (std::size_t c = 0; c < h; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      m = std::max(m, std::fabs(w1f(r, c)));
    s1[c] = m == 0.0 ? 1.0 : pow2_floor(fmt.max_normal / m);
  }
  FoldedWeights out;
  out.w1 = quantize_per_channel(w1f.span(), d, h, s1, fmt);

  // per-row pow2 jit scales for w3
  out.w3.format = fmt.name;
  out.w3.shape = w3f.shape;
  out.w3.codes.resize(w3f.size());
  out.w3.scales.assign(h, 1.0);
  for (std::size_t c = 0; c < h; ++c) {
    double m = 0.0;
    for (std::size_t j = 0; j < dout; ++j)
      m = std::max(m, std::fabs(w3f(c, j)));
    const double s = m == 0.0 ? 1.0 : pow2_floor(fmt.max_normal / m);
    out.w3.scales[c] = s;
    for (std::size_t j = 0; j < dout; ++j)
      out.w3.codes[c * dout + j] =
          encode_bits(s * w3f(c, j), fmt, Overflow::saturate);
  }
  return out;
}

Tensor GeluBlock::forward(const Tensor& x, const PrecisionPolicy& pol,
                          QuantContext& qc, const std::string& tag,
                          Cache* cache) const {
  if (x.cols() != in_dim())
    throw std::invalid_argument("gelu forward: input width mismatch");
  Tensor xq = fq_act(x, pol, qc, tag + ".x");
  Tensor waq = fq_weight(wa, pol, qc, tag + ".wa");
  Tensor pre = matmul(xq, waq);
  Tensor a({pre.rows(), pre.cols()});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = gelu(pre[i]);
  PrecisionPolicy gate_pol = pol;
  if (gate_pol.swiglu_out == SwigluOutQuant::per_channel)
    gate_pol.swiglu_out = SwigluOutQuant::e4m3_delayed;
  Tensor aq = fq_gate_out(a, gate_pol, qc, tag + ".a", nullptr);
  Tensor wbq = fq_weight(wb, pol, qc, tag + ".wb");
  Tensor y = matmul(aq, wbq);
  if (cache) {
    cache->x_used = std::move(xq);
    cache->wa_used = std::move(waq);
    cache->wb_used = std::move(wbq);
    cache->pre = std::move(pre);
    cache->a_used = std::move(aq);
  }
  return y;
}

Tensor GeluBlock::backward(const Tensor& dy, const Cache& cache,
                           const PrecisionPolicy& pol, QuantContext& qc,
                           const std::string& tag, Grads& grads) const {
  if (dy.cols() != out_dim())
    throw std::invalid_argument("gelu backward: grad width mismatch");
  Tensor dyq = fq_grad(dy, pol, qc, tag + ".dy");
  grads.dwb = matmul_ta(cache.a_used, dyq);
  Tensor da = matmul_bt(dyq, cache.wb_used);
  Tensor dpre({da.rows(), da.cols()});
  for (std::size_t i = 0; i < da.size(); ++i)
    dpre[i] = da[i] * gelu_grad(cache.pre[i]);
  Tensor dpreq = fq_grad(dpre, pol, qc, tag + ".dpre");
  grads.dwa = matmul_ta(cache.x_used, dpreq);
  return matmul_bt(dpreq, cache.wa_used);
}

}  // namespace fp8lab
