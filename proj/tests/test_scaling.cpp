// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fp8lab/quant_context.hpp"
#include "fp8lab/scaling.hpp"

using namespace fp8lab;

namespace {
const FormatSpec& E4M3 = FormatSpec::get(FormatName::e4m3);
const FormatSpec& E5M2 = FormatSpec::get(FormatName::e5m2);
}  // namespace

TEST_CASE("amax history: append and ring eviction") {
  AmaxHistory h(2);
  CHECK(h.empty());
  h.update(3.0);
  CHECK(h.size() == 1);
  CHECK(h.effective_amax() == 3.0);
  h.update(1.0);
  h.update(2.0);  // evicts 3.0
  CHECK(h.size() == 2);
  CHECK(h.effective_amax() == 2.0);
  h.update(5.0);  // evicts 1.0
  std::vector<double> w(h.window().begin(), h.window().end());
  CHECK(w == std::vector<double>{2.0, 5.0});
}

TEST_CASE("amax history: reductions and validation") {
  AmaxHistory h(8, AmaxReduction::max);
  h.update(100.0);
  h.update(200.0);
  h.update(150.0);
  CHECK(h.effective_amax() == 200.0);
  AmaxHistory recent(8, AmaxReduction::most_recent);
  recent.update(100.0);
  recent.update(150.0);
  CHECK(recent.effective_amax() == 150.0);
  CHECK_THROWS_AS(h.update(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(h.update(std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  AmaxHistory empty(4);
  CHECK_THROWS_AS((void)empty.effective_amax(), std::invalid_argument);
  CHECK_THROWS_AS((void)delayed_scale(empty, E4M3), std::invalid_argument);
}

TEST_CASE("delayed_scale formula") {
  AmaxHistory h(4);
  h.update(E4M3.max_normal);
  CHECK(delayed_scale(h, E4M3, 1.0) == 1.0);
  AmaxHistory zero(4);
  zero.update(0.0);
  CHECK(delayed_scale(zero, E4M3, 1.0) == 1.0);
  AmaxHistory two(4);
  two.update(200.0);
  CHECK(delayed_scale(two, E4M3, 1.0) == E4M3.max_normal / 200.0);
  CHECK_THROWS_AS((void)delayed_scale(two, E4M3, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)delayed_scale(two, E4M3, 1.5), std::invalid_argument);
}

TEST_CASE("delayed_scale invariant to window permutation under max") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<double> vals;
  for (int i = 0; i < 8; ++i) vals.push_back(u(rng));
  AmaxHistory a(8), b(8);
  for (double v : vals) a.update(v);
  std::shuffle(vals.begin(), vals.end(), rng);
  for (double v : vals) b.update(v);
  CHECK(delayed_scale(a, E5M2) == delayed_scale(b, E5M2));
}

TEST_CASE("jit_scale") {
  std::vector<double> zeros(16, 0.0);
  CHECK(jit_scale(zeros, E4M3) == 1.0);
  std::vector<double> t{1.0, -E4M3.max_normal, 3.0};
  CHECK(jit_scale(t, E4M3) == 1.0);
  std::vector<double> big{2.0 * E4M3.max_normal};
  CHECK(jit_scale(big, E4M3) == 0.5);
  std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS((void)jit_scale(bad, E4M3), std::invalid_argument);
}

TEST_CASE("per_channel_scales") {
  // [tokens x channels] = 2 x 2, channel maxima (max_normal, 2 max_normal)
  std::vector<double> t{E4M3.max_normal, 2.0 * E4M3.max_normal,
                        -E4M3.max_normal / 2.0, E4M3.max_normal};
  ChannelScales s = per_channel_scales(t, 2, 2, E4M3, 1.0);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 0.5);

  std::vector<double> zeros(8, 0.0);
  ChannelScales sz = per_channel_scales(zeros, 4, 2, E4M3, 1.0);
  CHECK(sz == ChannelScales{1.0, 1.0});

  // order independence across thread counts
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::vector<double> big(64 * 33);
  for (auto& v : big) v = u(rng);
  set_num_threads(1);
  ChannelScales s1 = per_channel_scales(big, 64, 33, E4M3);
  set_num_threads(4);
  ChannelScales s4 = per_channel_scales(big, 64, 33, E4M3);
  set_num_threads(1);
  CHECK(s1 == s4);
}

TEST_CASE("pow2 snapping never raises a scale") {
  CHECK(pow2_floor(1.0) == 1.0);
  CHECK(pow2_floor(0.5) == 0.5);
  CHECK(pow2_floor(0.7) == 0.5);
  CHECK(pow2_floor(447.9) == 256.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const double s = std::exp2(u(rng)) * (1.0 + 0.9 * std::abs(u(rng)) / 20);
    const double p = pow2_floor(s);
    CHECK(p <= s);
    CHECK(p > s / 2.0);
    CHECK(std::exp2(std::round(std::log2(p))) == p);
  }
}

TEST_CASE("quantize: zeros, no-saturation by construction, counting") {
  std::vector<double> zeros(16, 0.0);
  ScaledTensor q = quantize(zeros, {16}, 1.0, E4M3);
  CHECK(q.stats.saturated == 0);
  CHECK(q.stats.underflowed_to_zero == 0);
  for (auto c : q.codes) CHECK(c == 0);

  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-7.0, 7.0);
  std::vector<double> t(256);
  for (auto& v : t) v = u(rng);
  const double s = jit_scale(t, E4M3, 1.0);
  ScaledTensor qt = quantize(t, {256}, s, E4M3);
  CHECK(qt.stats.saturated == 0);

  std::vector<double> big{1.0, 10.0 * E4M3.max_normal, -2.0};
  ScaledTensor qb = quantize(big, {3}, 1.0, E4M3);
  CHECK(qb.stats.saturated == 1);
  CHECK(dequantize(qb)[1] == E4M3.max_normal);

  // underflow-to-zero accounting
  std::vector<double> tiny{E4M3.min_subnormal / 4.0, 1.0};
  ScaledTensor qu = quantize(tiny, {2}, 1.0, E4M3);
  CHECK(qu.stats.underflowed_to_zero == 1);
}

TEST_CASE("dequantize(quantize) within half ulp when unsaturated") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto* fmt : {&E4M3, &E5M2}) {
    std::vector<double> t(512);
    for (auto& v : t) v = u(rng) * 20.0;
    const double s = jit_scale(t, *fmt, 1.0);
    ScaledTensor q = quantize(t, {512}, s, *fmt);
    CHECK(q.stats.saturated == 0);
    std::vector<double> back = dequantize(q);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double err = std::fabs(back[i] - t[i]);
      CHECK(err <= ulp_at(s * t[i], *fmt) / 2.0 / s * (1.0 + 1e-15));
    }
  }
}

TEST_CASE("per-channel quantize leaves margin-1 tensors unsaturated") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> t(96 * 7);
  for (auto& v : t) v = u(rng) * std::exp2(u(rng) * 10.0);
  ChannelScales s = per_channel_scales(t, 96, 7, E4M3, 1.0);
  ScaledTensor q = quantize_per_channel(t, 96, 7, s, E4M3);
  CHECK(q.stats.saturated == 0);
  // snapped scales keep the guarantee
  ScaledTensor q2 = quantize_per_channel(t, 96, 7, snap_pow2(s), E4M3);
  CHECK(q2.stats.saturated == 0);
}

TEST_CASE("scale convention round trip for constant tensors") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double c = u(rng);
    const double s = u(rng);
    if (std::fabs(s * c) > E4M3.max_normal ||
        std::fabs(s * c) < E4M3.min_normal())
      continue;
    std::vector<double> t(8, c);
    ScaledTensor q = quantize(t, {8}, s, E4M3);
    std::vector<double> back = dequantize(q);
    for (double b : back)
      CHECK(std::fabs(b - c) <= ulp_at(s * c, E4M3) / 2.0 / s * (1 + 1e-15));
  }
}

TEST_CASE("quant context: delayed scaling seeds jit then uses history") {
  QuantConfig qcfg;
  qcfg.history_capacity = 4;
  QuantContext qc(qcfg);
  qc.begin_iteration(0);
  Tensor t({2, 2});
  t.data = {1.0, -2.0, 0.5, 2.0};
  // first call seeds just-in-time: amax 2 -> scale 224
  Tensor out = qc.fake_quant_delayed("x", t, FormatName::e4m3);
  CHECK(qc.iteration_traces().at("x").scale == E4M3.max_normal / 2.0);
  CHECK(qc.iteration_traces().at("x").saturated == 0);
  // second iteration: bigger tensor, delayed scale still from history
  qc.begin_iteration(1);
  Tensor t2({2, 2});
  t2.data = {4.0, -8.0, 0.5, 2.0};
  out = qc.fake_quant_delayed("x", t2, FormatName::e4m3);
  CHECK(qc.iteration_traces().at("x").scale == E4M3.max_normal / 2.0);
  CHECK(qc.iteration_traces().at("x").saturated > 0);
  CHECK(qc.total_saturated("x") > 0);
  // third iteration: history now covers amax 8
  qc.begin_iteration(2);
  out = qc.fake_quant_delayed("x", t2, FormatName::e4m3);
  CHECK(qc.iteration_traces().at("x").scale == E4M3.max_normal / 8.0);
  CHECK(qc.iteration_traces().at("x").saturated == 0);
  (void)out;
}

TEST_CASE("quant context disabled is a true no-op") {
  QuantContext qc;
  qc.set_enabled(false);
  Tensor t({1, 3});
  t.data = {0.3, -1.7, 1e-6};
  Tensor out = qc.fake_quant_delayed("x", t, FormatName::e4m3);
  CHECK(out.data == t.data);
  CHECK(qc.iteration_traces().empty());
  CHECK(qc.total_saturated() == 0);
}

TEST_CASE("quant context per-channel path respects cadence") {
  QuantConfig qcfg;
  qcfg.channel_scale_cadence = 2;
  qcfg.snap_scales_pow2 = false;
  QuantContext qc(qcfg);
  Tensor t({2, 2});
  t.data = {1.0, 2.0, -1.0, 0.5};
  qc.begin_iteration(0);
  ChannelScales s0;
  (void)qc.fake_quant_per_channel("u", t, FormatName::e4m3, &s0);
  CHECK(s0[0] == E4M3.max_normal / 1.0);
  CHECK(s0[1] == E4M3.max_normal / 2.0);
  // next iteration reuses cached scales (cadence 2)
  qc.begin_iteration(1);
  Tensor bigger = t;
  for (auto& v : bigger.data) v *= 4.0;
  ChannelScales s1;
  (void)qc.fake_quant_per_channel("u", bigger, FormatName::e4m3, &s1);
  CHECK(s1 == s0);
  // iteration 2 refreshes
  qc.begin_iteration(2);
  ChannelScales s2;
  (void)qc.fake_quant_per_channel("u", bigger, FormatName::e4m3, &s2);
  CHECK(s2[0] == E4M3.max_normal / 4.0);
}
