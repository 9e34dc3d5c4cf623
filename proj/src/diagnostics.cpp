// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fp8lab {

namespace {

std::string num(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

double channel_correlation(std::span<const double> w1_col,
                           std::span<const double> w2_col) {
  if (w1_col.size() != w2_col.size())
    throw std::invalid_argument("channel_correlation: length mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < w1_col.size(); ++i) {
    dot += w1_col[i] * w2_col[i];
    n1 += w1_col[i] * w1_col[i];
    n2 += w2_col[i] * w2_col[i];
  }
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  const double c = dot / (std::sqrt(n1) * std::sqrt(n2));
  return std::clamp(c, -1.0, 1.0);
}

MagnitudeHistogram input_magnitude_histogram(const Tensor& x,
                                             std::span<const double> w2_col,
                                             int bins) {
  if (x.rows() == 0) throw std::invalid_argument("histogram: empty batch");
  if (x.cols() != w2_col.size())
    throw std::invalid_argument("histogram: w2 length mismatch");
  if (bins < 1) throw std::invalid_argument("histogram: need >= 1 bin");

  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mags;
  mags.reserve(n);
  MagnitudeHistogram h;
  h.total = std::int64_t(n);
  std::int64_t below1 = 0, beloweuler = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += x(i, j) * w2_col[j];
    const double m = std::fabs(dot);
    if (m < 1.0) ++below1;
    if (m < std::exp(1.0)) ++beloweuler;
    if (m == 0.0) {
      ++h.zero_count;
    } else {
      mags.push_back(std::log(m));
    }
  }
  h.fraction_below_1 = double(below1) / double(n);
  h.fraction_below_e = double(beloweuler) / double(n);

  double lo = 0.0, hi = 1.0;
  if (!mags.empty()) {
    lo = *std::min_element(mags.begin(), mags.end());
    hi = *std::max_element(mags.begin(), mags.end());
    if (hi == lo) hi = lo + 1.0;
  }
  h.edges.resize(std::size_t(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[std::size_t(b)] = lo + (hi - lo) * double(b) / double(bins);
  h.counts.assign(std::size_t(bins), 0);
  for (double m : mags) {
    auto b = std::size_t((m - lo) / (hi - lo) * double(bins));
    if (b >= std::size_t(bins)) b = std::size_t(bins) - 1;
    ++h.counts[b];
  }
  return h;
}

std::string histogram_csv(const MagnitudeHistogram& h) {
  std::string out = "ln_lo,ln_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += num(h.edges[b]);
    out += ',';
    out += num(h.edges[b + 1]);
    out += ',';
    out += std::to_string(h.counts[b]);
    out += '\n';
  }
  out += "# zero_count," + std::to_string(h.zero_count) + "\n";
  out += "# total," + std::to_string(h.total) + "\n";
  out += "# fraction_below_1," + num(h.fraction_below_1) + "\n";
  out += "# fraction_below_e," + num(h.fraction_below_e) + "\n";
  return out;
}

void DiagnosticsRecord::record_amax(const std::string& layer,
                                    std::int64_t iteration,
                                    const Tensor& activation) {
  LayerRow row;
  row.iteration = iteration;
  row.layer = layer;
  if (!activation.all_finite()) {
    row.diverged = true;
  } else {
    row.amax_pre = row.amax_post = activation.amax();
  }
  layers_.push_back(std::move(row));
}

void DiagnosticsRecord::record_trace(std::int64_t iteration,
                                     const std::string& tag,
                                     const TagTrace& trace) {
  LayerRow row;
  row.iteration = iteration;
  row.layer = tag;
  row.amax_pre = trace.amax_pre;
  row.amax_post = trace.amax_post;
  row.scale = trace.scale;
  row.saturated = trace.saturated;
  row.underflowed = trace.underflowed_to_zero;
  layers_.push_back(std::move(row));
}

void DiagnosticsRecord::record_channels(std::int64_t iteration,
                                        const std::string& layer,
                                        const Tensor& w1, const Tensor& w2,
                                        const Tensor* gate_out) {
  if (w1.shape != w2.shape)
    throw std::invalid_argument("record_channels: w1/w2 shape mismatch");
  const std::size_t d = w1.rows(), h = w1.cols();
  std::vector<double> c1(d), c2(d);
  for (std::size_t c = 0; c < h; ++c) {
    for (std::size_t r = 0; r < d; ++r) {
      c1[r] = w1(r, c);
      c2[r] = w2(r, c);
    }
    ChannelRow row;
    row.iteration = iteration;
    row.layer = layer;
    row.channel = int(c);
    row.cos_w1w2 = channel_correlation(c1, c2);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      s1 += c1[r] * c1[r];
      s2 += c2[r] * c2[r];
    }
    row.norm_w1 = std::sqrt(s1);
    row.norm_w2 = std::sqrt(s2);
    if (gate_out) {
      double m = 0.0;
      for (std::size_t n = 0; n < gate_out->rows(); ++n)
        m = std::max(m, std::fabs((*gate_out)(n, c)));
      row.amax = m;
    }
    channels_.push_back(std::move(row));
  }
}

std::string DiagnosticsRecord::csv() const {
  std::string out =
      "iteration,layer,channel,cos_w1w2,norm_w1,norm_w2,amax_pre,amax_post,"
      "scale,saturated,underflowed,diverged\n";
  for (const auto& r : layers_) {
    out += std::to_string(r.iteration) + ',' + r.layer + ",-1,,,,";
    out += num(r.amax_pre) + ',' + num(r.amax_post) + ',' + num(r.scale) + ',';
    out += std::to_string(r.saturated) + ',' + std::to_string(r.underflowed);
    out += r.diverged ? ",1\n" : ",0\n";
  }
  for (const auto& r : channels_) {
    out += std::to_string(r.iteration) + ',' + r.layer + ',' +
           std::to_string(r.channel) + ',';
    out += num(r.cos_w1w2) + ',' + num(r.norm_w1) + ',' + num(r.norm_w2) + ',';
    out += num(r.amax) + ",,,,,0\n";
  }
  return out;
}

std::vector<OutlierChannel> detect_outlier_channels(
    const DiagnosticsRecord& rec, const OutlierCriteria& crit) {
  // group per (layer, channel), in first-seen order
  std::map<std::pair<std::string, int>, std::vector<const DiagnosticsRecord::ChannelRow*>>
      series;
  for (const auto& r : rec.channel_rows())
    series[{r.layer, r.channel}].push_back(&r);
  std::vector<OutlierChannel> out;
  for (auto& [key, rows] : series) {
    if (rows.empty()) continue;
    std::vector<double> amaxes;
    amaxes.reserve(rows.size());
    for (auto* r : rows) amaxes.push_back(r->amax);
    const auto* last = rows.back();
    // lower median of the trace (robust for short series)
    std::vector<double> sorted = amaxes;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(sorted.size() - 1) / 2];
    if (median <= 0.0) continue;
    const double ratio = last->amax / median;
    if (ratio > crit.amax_ratio_threshold &&
        std::fabs(last->cos_w1w2) > crit.cos_threshold) {
      out.push_back({key.first, key.second, ratio, last->cos_w1w2});
    }
  }
  return out;
}

}  // namespace fp8lab
