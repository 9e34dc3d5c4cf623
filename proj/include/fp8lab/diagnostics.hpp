// SPDX-License-Identifier: Apache-2.0
//
// Run instrumentation: per-layer activation amax traces (pre and post
// quantization), per-channel gate-weight correlation and norms, gate
// pre-activation magnitude histograms, saturation accounting and
// outlier-channel detection. Everything lands in one CSV per run.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fp8lab/quant_context.hpp"
#include "fp8lab/tensor.hpp"

namespace fp8lab {

// Cosine similarity of two channel weight vectors; 0 when either is zero.
double channel_correlation(std::span<const double> w1_col,
                           std::span<const double> w2_col);

struct MagnitudeHistogram {
  // bin i covers ln-magnitudes [edges[i], edges[i+1])
  std::vector<double> edges;
  std::vector<std::int64_t> counts;
  std::int64_t zero_count = 0;  // |w2.x| == 0 tokens (no ln magnitude)
  std::int64_t total = 0;
  double fraction_below_1 = 0.0;
  double fraction_below_e = 0.0;
};

// Histogram of |w2 . x_n| over the batch rows on a natural-log axis,
// with the fractions below 1 and below e.
MagnitudeHistogram input_magnitude_histogram(const Tensor& x,
                                             std::span<const double> w2_col,
                                             int bins = 40);

std::string histogram_csv(const MagnitudeHistogram& h);

class DiagnosticsRecord {
 public:
  struct LayerRow {
    std::int64_t iteration = 0;
    std::string layer;
    double amax_pre = 0.0;
    double amax_post = 0.0;
    double scale = 1.0;
    std::int64_t saturated = 0;
    std::int64_t underflowed = 0;
    bool diverged = false;
  };
  struct ChannelRow {
    std::int64_t iteration = 0;
    std::string layer;
    int channel = 0;
    double cos_w1w2 = 0.0;
    double norm_w1 = 0.0;
    double norm_w2 = 0.0;
    double amax = 0.0;  // channel activation amax, when available
  };

  // Stores max |element|; a non-finite tensor records a divergence flag.
  void record_amax(const std::string& layer, std::int64_t iteration,
                   const Tensor& activation);
  // Snapshot of one quantizer tag for one iteration.
  void record_trace(std::int64_t iteration, const std::string& tag,
                    const TagTrace& trace);
  // Per-channel stats of a gated block: correlation and norms from the
  // weights, channel amax from the gate output when given.
  void record_channels(std::int64_t iteration, const std::string& layer,
                       const Tensor& w1, const Tensor& w2,
                       const Tensor* gate_out = nullptr);

  const std::vector<LayerRow>& layer_rows() const { return layers_; }
  const std::vector<ChannelRow>& channel_rows() const { return channels_; }

  std::string csv() const;

 private:
  std::vector<LayerRow> layers_;
  std::vector<ChannelRow> channels_;
};

struct OutlierCriteria {
  double amax_ratio_threshold = 10.0;
  double cos_threshold = 0.9;
};

struct OutlierChannel {
  std::string layer;
  int channel = 0;
  double amax_ratio = 0.0;  // latest amax over running median
  double cos = 0.0;
};

// Channels whose latest amax exceeds ratio x running median of their own
// trace AND whose |cos(w1, w2)| exceeds the threshold.
std::vector<OutlierChannel> detect_outlier_channels(
    const DiagnosticsRecord& rec, const OutlierCriteria& crit = {});

}  // namespace fp8lab
