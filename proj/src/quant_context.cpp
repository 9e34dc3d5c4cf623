// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/quant_context.hpp"

#include <stdexcept>

namespace fp8lab {

QuantContext::QuantContext(QuantConfig cfg) : cfg_(cfg) {
  if (cfg_.channel_scale_cadence < 1)
    throw std::invalid_argument("channel scale cadence must be >= 1");
}

void QuantContext::begin_iteration(std::int64_t iter) {
  iter_ = iter;
  traces_.clear();
}

void QuantContext::record(const std::string& tag, const Tensor& pre,
                          const Tensor& post, double scale,
                          const QuantStats& stats) {
  TagTrace& tr = traces_[tag];
  tr.amax_pre = std::max(tr.amax_pre, pre.amax());
  tr.amax_post = std::max(tr.amax_post, post.amax());
  tr.scale = scale;
  tr.saturated += stats.saturated;
  tr.underflowed_to_zero += stats.underflowed_to_zero;
  ++tr.events;
  QuantStats& tot = totals_[tag];
  tot.saturated += stats.saturated;
  tot.underflowed_to_zero += stats.underflowed_to_zero;
}

Tensor QuantContext::fake_quant_delayed(const std::string& tag,
                                        const Tensor& t, FormatName fmt) {
  if (!enabled_) return t;
  const FormatSpec& spec = FormatSpec::get(fmt);
  const double amax_now = tensor_amax(t.span());
  auto it = histories_.find(tag);
  if (it == histories_.end()) {
    it = histories_
             .emplace(tag, AmaxHistory(cfg_.history_capacity, cfg_.reduction))
             .first;
  }
  double scale;
  if (it->second.empty()) {
    // first iteration has no preceding statistics; seed just-in-time
    scale = amax_now == 0.0 ? 1.0 : cfg_.margin * spec.max_normal / amax_now;
  } else {
    scale = delayed_scale(it->second, spec, cfg_.margin);
  }
  it->second.update(amax_now);
  ScaledTensor st = quantize(t.span(), t.shape, scale, spec);
  Tensor out;
  out.shape = t.shape;
  out.data.resize(t.size());
  dequantize_into(st, out.data);
  record(tag, t, out, scale, st.stats);
  return out;
}

Tensor QuantContext::fake_quant_jit(const std::string& tag, const Tensor& t,
                                    FormatName fmt) {
  if (!enabled_) return t;
  const FormatSpec& spec = FormatSpec::get(fmt);
  const double scale = jit_scale(t.span(), spec, cfg_.margin);
  ScaledTensor st = quantize(t.span(), t.shape, scale, spec);
  Tensor out;
  out.shape = t.shape;
  out.data.resize(t.size());
  dequantize_into(st, out.data);
  record(tag, t, out, scale, st.stats);
  return out;
}

Tensor QuantContext::fake_quant_unit(const std::string& tag, const Tensor& t,
                                     FormatName fmt) {
  if (!enabled_) return t;
  const FormatSpec& spec = FormatSpec::get(fmt);
  ScaledTensor st = quantize(t.span(), t.shape, 1.0, spec);
  Tensor out;
  out.shape = t.shape;
  out.data.resize(t.size());
  dequantize_into(st, out.data);
  record(tag, t, out, 1.0, st.stats);
  return out;
}

Tensor QuantContext::fake_quant_per_channel(const std::string& tag,
                                            const Tensor& t, FormatName fmt,
                                            ChannelScales* scales_used) {
  if (!enabled_) {
    if (scales_used) scales_used->assign(t.cols(), 1.0);
    return t;
  }
  const FormatSpec& spec = FormatSpec::get(fmt);
  const std::size_t tokens = t.rows(), channels = t.cols();
  auto cached = channel_scales_.find(tag);
  const bool stale =
      cached == channel_scales_.end() ||
      cached->second.size() != channels ||
      iter_ - channel_scales_iter_[tag] >= cfg_.channel_scale_cadence;
  if (stale) {
    ChannelScales s =
        per_channel_scales(t.span(), tokens, channels, spec, cfg_.margin);
    if (cfg_.snap_scales_pow2) s = snap_pow2(s);
    channel_scales_[tag] = std::move(s);
    channel_scales_iter_[tag] = iter_;
    cached = channel_scales_.find(tag);
  }
  const ChannelScales& s = cached->second;
  if (scales_used) *scales_used = s;
  ScaledTensor st = quantize_per_channel(t.span(), tokens, channels, s, spec);
  Tensor out;
  out.shape = t.shape;
  out.data.resize(t.size());
  dequantize_into(st, out.data);
  record(tag, t, out, s.empty() ? 1.0 : s[0], st.stats);
  return out;
}

std::int64_t QuantContext::total_saturated(const std::string& sub) const {
  std::int64_t n = 0;
  for (const auto& [tag, st] : totals_)
    if (sub.empty() || tag.find(sub) != std::string::npos) n += st.saturated;
  return n;
}

std::int64_t QuantContext::total_underflowed(const std::string& sub) const {
  std::int64_t n = 0;
  for (const auto& [tag, st] : totals_)
    if (sub.empty() || tag.find(sub) != std::string::npos)
      n += st.underflowed_to_zero;
  return n;
}

void QuantContext::restore_history(const std::string& tag,
                                   const AmaxHistory& h) {
  histories_.erase(tag);
  histories_.emplace(tag, h);
}

void QuantContext::restore_channel_scales(const std::string& tag,
                                          ChannelScales s,
                                          std::int64_t refreshed_at) {
  channel_scales_[tag] = std::move(s);
  channel_scales_iter_[tag] = refreshed_at;
}

}  // namespace fp8lab
