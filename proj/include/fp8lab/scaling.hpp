// SPDX-License-Identifier: Apache-2.0
//
// Scale-factor computation and tensor quantization: per-tensor delayed
// scaling backed by an amax history, just-in-time per-tensor scaling, and
// per-channel scaling. The convention throughout is multiply by the scale
// before encoding and divide after decoding.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fp8lab/formats.hpp"

namespace fp8lab {

enum class AmaxReduction { max, most_recent };

// Rolling per-tensor record of iteration amax values. Single writer (the
// training loop); eviction is oldest-first once capacity is reached.
class AmaxHistory {
 public:
  explicit AmaxHistory(std::size_t capacity = 16,
                       AmaxReduction reduction = AmaxReduction::max);

  void update(double observed_amax);  // rejects negative / non-finite
  double effective_amax() const;      // reduction over the window
  bool empty() const { return window_.empty(); }
  std::size_t size() const { return window_.size(); }
  std::size_t capacity() const { return capacity_; }
  AmaxReduction reduction() const { return reduction_; }
  std::span<const double> window() const { return window_; }

 private:
  std::vector<double> window_;  // window_[0] oldest
  std::size_t capacity_;
  AmaxReduction reduction_;
};

using ChannelScales = std::vector<double>;

struct QuantStats {
  std::int64_t saturated = 0;
  std::int64_t underflowed_to_zero = 0;
};

// Quantized payload plus everything needed to dequantize it bit-exactly.
// scales has one entry (per-tensor) or one entry per channel, in which
// case the tensor is [tokens x channels] and channel i uses scales[i].
struct ScaledTensor {
  std::vector<std::uint16_t> codes;
  std::vector<double> scales;
  FormatName format = FormatName::e4m3;
  std::vector<std::size_t> shape;
  QuantStats stats;

  bool per_channel() const { return scales.size() > 1; }
  std::size_t size() const { return codes.size(); }
};

// scale = margin * max_normal / effective amax; an all-zero window gives 1.
double delayed_scale(const AmaxHistory& h, const FormatSpec& fmt,
                     double margin = 1.0);

double tensor_amax(std::span<const double> t);

// scale = margin * max_normal / amax(t); amax 0 gives 1.
double jit_scale(std::span<const double> t, const FormatSpec& fmt,
                 double margin = 1.0);

// Per-channel scales for a [tokens x channels] tensor. Channels are
// independent; all-zero channels get scale 1.
ChannelScales per_channel_scales(std::span<const double> t,
                                 std::size_t tokens, std::size_t channels,
                                 const FormatSpec& fmt, double margin = 1.0);

// Largest power of two <= s. Scales snapped this way commute exactly with
// encoding in the normal range, which keeps inference scale folding
// bit-faithful; margin guarantees survive because the snap only shrinks.
double pow2_floor(double s);
ChannelScales snap_pow2(const ChannelScales& s);

ScaledTensor quantize(std::span<const double> t,
                      std::vector<std::size_t> shape, double scale,
                      const FormatSpec& fmt);
ScaledTensor quantize_per_channel(std::span<const double> t,
                                  std::size_t tokens, std::size_t channels,
                                  const ChannelScales& scales,
                                  const FormatSpec& fmt);

std::vector<double> dequantize(const ScaledTensor& t);
void dequantize_into(const ScaledTensor& t, std::span<double> out);

}  // namespace fp8lab
