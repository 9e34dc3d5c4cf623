// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fp8lab/tensor.hpp"

namespace fp8lab {

AmaxHistory::AmaxHistory(std::size_t capacity, AmaxReduction reduction)
    : capacity_(capacity), reduction_(reduction) {
  if (capacity_ == 0) throw std::invalid_argument("amax history capacity 0");
  window_.reserve(capacity_);
}

void AmaxHistory::update(double observed_amax) {
  if (!(observed_amax >= 0.0) || !std::isfinite(observed_amax))
    throw std::invalid_argument("amax must be finite and nonnegative");
  if (window_.size() == capacity_) window_.erase(window_.begin());
  window_.push_back(observed_amax);
}

double AmaxHistory::effective_amax() const {
  if (window_.empty())
    throw std::invalid_argument("amax history is empty; seed it first");
  if (reduction_ == AmaxReduction::most_recent) return window_.back();
  return *std::max_element(window_.begin(), window_.end());
}

namespace {

void check_margin(double margin) {
  if (!(margin > 0.0) || margin > 1.0 || !std::isfinite(margin))
    throw std::invalid_argument("margin must be in (0, 1]");
}

double scale_from_amax(double amax, const FormatSpec& fmt, double margin) {
  if (amax == 0.0) return 1.0;
  return margin * fmt.max_normal / amax;
}

}  // namespace

double delayed_scale(const AmaxHistory& h, const FormatSpec& fmt,
                     double margin) {
  check_margin(margin);
  return scale_from_amax(h.effective_amax(), fmt, margin);
}

double tensor_amax(std::span<const double> t) {
  double m = 0.0;
  for (double v : t) {
    if (!std::isfinite(v))
      throw std::invalid_argument("tensor has non-finite elements");
    m = std::max(m, std::fabs(v));
  }
  return m;
}

double jit_scale(std::span<const double> t, const FormatSpec& fmt,
                 double margin) {
  check_margin(margin);
  return scale_from_amax(tensor_amax(t), fmt, margin);
}

ChannelScales per_channel_scales(std::span<const double> t,
                                 std::size_t tokens, std::size_t channels,
                                 const FormatSpec& fmt, double margin) {
  check_margin(margin);
  if (channels == 0) throw std::invalid_argument("need at least one channel");
  if (t.size() != tokens * channels)
    throw std::invalid_argument("tensor size does not match tokens x channels");
  ChannelScales s(channels, 1.0);
  parallel_for(channels, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < tokens; ++n) {
        const double v = t[n * channels + c];
        if (!std::isfinite(v))
          throw std::invalid_argument("tensor has non-finite elements");
        m = std::max(m, std::fabs(v));
      }
      s[c] = scale_from_amax(m, fmt, margin);
    }
  });
  return s;
}

double pow2_floor(double s) {
  if (!(s > 0.0) || !std::isfinite(s))
    throw std::invalid_argument("scale must be positive and finite");
  int e = 0;
  std::frexp(s, &e);  // s = f * 2^e, f in [0.5, 1), so 2^(e-1) <= s
  return std::ldexp(1.0, e - 1);
}

ChannelScales snap_pow2(const ChannelScales& s) {
  ChannelScales out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = pow2_floor(s[i]);
  return out;
}

namespace {

void check_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s))
    throw std::invalid_argument("scale must be positive and finite");
}

// A value inside (max_normal, max_normal + ulp/2) rounds down to
// max_normal under nearest-even anyway; only values beyond that threshold
// are genuinely clamped and count as saturation events.
inline void encode_one(double v, double scale, const FormatSpec& fmt,
                       double saturation_threshold, std::uint16_t* out,
                       QuantStats& st) {
  const double scaled = scale * v;
  if (!std::isnan(scaled) && std::fabs(scaled) > saturation_threshold)
    ++st.saturated;
  const std::uint16_t bits = encode_bits(scaled, fmt, Overflow::saturate);
  if (scaled != 0.0 && decode_bits(bits, fmt) == 0.0) ++st.underflowed_to_zero;
  *out = bits;
}

inline double saturation_threshold_of(const FormatSpec& fmt) {
  return fmt.max_normal + ulp_at(fmt.max_normal, fmt) / 2.0;
}

}  // namespace

ScaledTensor quantize(std::span<const double> t,
                      std::vector<std::size_t> shape, double scale,
                      const FormatSpec& fmt) {
  check_scale(scale);
  ScaledTensor out;
  out.codes.resize(t.size());
  out.scales = {scale};
  out.format = fmt.name;
  out.shape = std::move(shape);
  // stats are merged in chunk order, so totals are thread-count invariant
  const double thresh = saturation_threshold_of(fmt);
  const int nt = num_threads();
  std::vector<QuantStats> parts(std::size_t(nt < 1 ? 1 : nt) * 8);
  const std::size_t chunk = (t.size() + parts.size() - 1) / parts.size();
  parallel_for(parts.size(), [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      const std::size_t b = p * chunk;
      const std::size_t e = std::min(t.size(), b + chunk);
      for (std::size_t i = b; i < e; ++i)
        encode_one(t[i], scale, fmt, thresh, &out.codes[i], parts[p]);
    }
  });
  for (const auto& p : parts) {
    out.stats.saturated += p.saturated;
    out.stats.underflowed_to_zero += p.underflowed_to_zero;
  }
  return out;
}

ScaledTensor quantize_per_channel(std::span<const double> t,
                                  std::size_t tokens, std::size_t channels,
                                  const ChannelScales& scales,
                                  const FormatSpec& fmt) {
  if (scales.size() != channels)
    throw std::invalid_argument("one scale per channel required");
  for (double s : scales) check_scale(s);
  if (t.size() != tokens * channels)
    throw std::invalid_argument("tensor size does not match tokens x channels");
  ScaledTensor out;
  out.codes.resize(t.size());
  out.scales = scales;
  out.format = fmt.name;
  out.shape = {tokens, channels};
  const double thresh = saturation_threshold_of(fmt);
  std::vector<QuantStats> parts(channels);
  parallel_for(channels, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c)
      for (std::size_t n = 0; n < tokens; ++n)
        encode_one(t[n * channels + c], scales[c], fmt, thresh,
                   &out.codes[n * channels + c], parts[c]);
  });
  for (const auto& p : parts) {
    out.stats.saturated += p.saturated;
    out.stats.underflowed_to_zero += p.underflowed_to_zero;
  }
  return out;
}

std::vector<double> dequantize(const ScaledTensor& t) {
  std::vector<double> out(t.codes.size());
  dequantize_into(t, out);
  return out;
}

void dequantize_into(const ScaledTensor& t, std::span<double> out) {
  if (out.size() != t.codes.size())
    throw std::invalid_argument("dequantize output size mismatch");
  const FormatSpec& fmt = FormatSpec::get(t.format);
  if (!t.per_channel()) {
    const double inv = t.scales.at(0);
    parallel_for(t.codes.size(), [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        out[i] = decode_bits(t.codes[i], fmt) / inv;
    });
    return;
  }
  const std::size_t channels = t.scales.size();
  if (t.shape.size() != 2 || t.shape[1] != channels)
    throw std::invalid_argument("per-channel tensor must be [tokens x channels]");
  const std::size_t tokens = t.shape[0];
  parallel_for(tokens, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t n = n0; n < n1; ++n)
      for (std::size_t c = 0; c < channels; ++c)
        out[n * channels + c] =
            decode_bits(t.codes[n * channels + c], fmt) / t.scales[c];
  });
}

}  // namespace fp8lab
