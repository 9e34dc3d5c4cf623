// SPDX-License-Identifier: Apache-2.0
//
// Per-tensor quantization orchestration for the training loop. Each
// quantized tensor is identified by a stable tag ("block0.u", "head.dy",
// ...). The context owns the delayed-scaling amax history per tag, the
// cached per-channel scales for smooth gating, and the saturation /
// underflow accounting that diagnostics exports.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fp8lab/scaling.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

struct QuantConfig {
  double margin = 1.0;
  std::size_t history_capacity = 16;
  AmaxReduction reduction = AmaxReduction::max;
  // Recompute smooth per-channel scales every k iterations (1 = per batch).
  int channel_scale_cadence = 1;
  // Snap per-channel scales down to powers of two. Keeps inference folding
  // exact in the normal range; never increases a scale, so margin holds.
  bool snap_scales_pow2 = true;
};

// One iteration's record for one tag.
struct TagTrace {
  double amax_pre = 0.0;   // amax before quantization
  double amax_post = 0.0;  // amax of the dequantized result
  double scale = 1.0;      // per-tensor scale (first channel scale if per-channel)
  std::int64_t saturated = 0;
  std::int64_t underflowed_to_zero = 0;
  int events = 0;
};

class QuantContext {
 public:
  explicit QuantContext(QuantConfig cfg = {});

  const QuantConfig& config() const { return cfg_; }
  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  void begin_iteration(std::int64_t iter);
  std::int64_t iteration() const { return iter_; }

  // Quantize-dequantize emulation paths. With the context disabled these
  // return the input unchanged and record nothing.
  Tensor fake_quant_delayed(const std::string& tag, const Tensor& t,
                            FormatName fmt);
  Tensor fake_quant_jit(const std::string& tag, const Tensor& t,
                        FormatName fmt);
  Tensor fake_quant_unit(const std::string& tag, const Tensor& t,
                         FormatName fmt);
  // Smooth path for [tokens x channels] tensors; channel scales are
  // refreshed from the current tensor per the configured cadence.
  Tensor fake_quant_per_channel(const std::string& tag, const Tensor& t,
                                FormatName fmt,
                                ChannelScales* scales_used = nullptr);

  const std::map<std::string, TagTrace>& iteration_traces() const {
    return traces_;
  }
  // Totals over the whole run; empty substring matches every tag.
  std::int64_t total_saturated(const std::string& tag_substr = {}) const;
  std::int64_t total_underflowed(const std::string& tag_substr = {}) const;

  const std::map<std::string, AmaxHistory>& histories() const {
    return histories_;
  }
  void restore_history(const std::string& tag, const AmaxHistory& h);

  const std::map<std::string, ChannelScales>& channel_scale_cache() const {
    return channel_scales_;
  }
  void restore_channel_scales(const std::string& tag, ChannelScales s,
                              std::int64_t refreshed_at);

 private:
  void record(const std::string& tag, const Tensor& pre, const Tensor& post,
              double scale, const QuantStats& stats);

  QuantConfig cfg_;
  bool enabled_ = true;
  std::int64_t iter_ = 0;
  std::map<std::string, AmaxHistory> histories_;
  std::map<std::string, ChannelScales> channel_scales_;
  std::map<std::string, std::int64_t> channel_scales_iter_;
  std::map<std::string, TagTrace> traces_;
  std::map<std::string, QuantStats> totals_;
};

}  // namespace fp8lab
