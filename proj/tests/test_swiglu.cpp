// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "fp8lab/blocks.hpp"
#include "fp8lab/grad_check.hpp"
#include "fp8lab/losses.hpp"

using namespace fp8lab;

namespace {

Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng,
             double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = d(rng);
  return t;
}

SwiGluBlock random_block(std::size_t d, std::size_t h, std::size_t out,
                         std::mt19937_64& rng, double scale = 1.0) {
  SwiGluBlock b;
  b.w1 = randn({d, h}, rng, scale / std::sqrt(double(d)));
  b.w2 = randn({d, h}, rng, scale / std::sqrt(double(d)));
  b.w3 = randn({h, out}, rng, scale / std::sqrt(double(h)));
  return b;
}

QuantContext wide_ctx() {
  QuantContext qc;
  qc.set_enabled(false);
  return qc;
}

const FormatSpec& E4M3 = FormatSpec::get(FormatName::e4m3);

}  // namespace

TEST_CASE("swish scalar values") {
  CHECK(swish(0.0) == 0.0);
  CHECK(std::fabs(swish(30.0) - 30.0) < 1e-9);
  // oracle: z * 1/(1+exp(-z))
  CHECK(swish(3.0) == doctest::Approx(3.0 / (1.0 + std::exp(-3.0)))
                          .epsilon(1e-15));
  CHECK(swish(3.0) == doctest::Approx(2.85772).epsilon(1e-5));
  CHECK(swish(-30.0) == doctest::Approx(0.0).epsilon(1e-11));
}

TEST_CASE("swiglu forward: zero input and scalar instance") {
  QuantContext qc = wide_ctx();
  PrecisionPolicy pol;
  std::mt19937_64 rng(1);
  SwiGluBlock blk = random_block(2, 1, 1, rng);

  Tensor zero({3, 2});
  SwiGluBlock::Cache cache;
  Tensor y = blk.forward(zero, pol, qc, "b", &cache);
  for (double v : y.data) CHECK(v == 0.0);
  for (double v : cache.u_raw.data) CHECK(v == 0.0);

  // x=(1,0), w1 col (2,0), w2 col (3,0): u = 2 swish(3)
  blk.w1 = Tensor::from({2, 1}, {2.0, 0.0});
  blk.w2 = Tensor::from({2, 1}, {3.0, 0.0});
  blk.w3 = Tensor::from({1, 1}, {1.0});
  Tensor x = Tensor::from({1, 2}, {1.0, 0.0});
  y = blk.forward(x, pol, qc, "b", &cache);
  CHECK(cache.u_raw[0] == doctest::Approx(5.71543).epsilon(1e-5));
  CHECK(y[0] == cache.u_raw[0]);
}

TEST_CASE("aligned gate weights make the output quadratic in input scale") {
  // base pre-activation 5 so sigmoid(pre2) > 0.99 at every tested c
  QuantContext qc = wide_ctx();
  PrecisionPolicy pol;
  SwiGluBlock blk;
  blk.w1 = Tensor::from({2, 1}, {5.0, 0.0});
  blk.w2 = blk.w1;  // aligned
  blk.w3 = Tensor::from({1, 1}, {1.0});
  auto u_at = [&](double c) {
    Tensor x = Tensor::from({1, 2}, {c, 0.0});
    SwiGluBlock::Cache cache;
    (void)blk.forward(x, pol, qc, "b", &cache);
    return cache.u_raw[0];
  };
  const double u1 = u_at(1.0), u2 = u_at(2.0), u4 = u_at(4.0);
  CHECK(std::fabs(u2 / u1 - 4.0) / 4.0 < 0.01);
  CHECK(std::fabs(u4 / u1 - 16.0) / 16.0 < 0.01);
}

TEST_CASE("swiglu backward: zeros, closed form at gate zero") {
  QuantContext qc = wide_ctx();
  PrecisionPolicy pol;
  SwiGluBlock blk;
  blk.w1 = Tensor::from({2, 1}, {1.5, 0.0});
  blk.w2 = Tensor::from({2, 1}, {0.0, 2.0});  // pre2 = 0 for x = (1, 0)
  blk.w3 = Tensor::from({1, 1}, {1.0});
  Tensor x = Tensor::from({1, 2}, {1.0, 0.0});
  SwiGluBlock::Cache cache;
  (void)blk.forward(x, pol, qc, "b", &cache);

  SwiGluBlock::Grads g;
  Tensor dy0({1, 1});
  (void)blk.backward(dy0, cache, pol, qc, "b", g);
  for (const Tensor* t : {&g.dw1, &g.dw2, &g.dw3})
    for (double v : t->data) CHECK(v == 0.0);

  Tensor dy = Tensor::from({1, 1}, {1.0});
  (void)blk.backward(dy, cache, pol, qc, "b", g);
  // swish(0) = 0 kills the w1 branch; w2 sees pre1 * sigma(0) = 1.5/2
  CHECK(g.dw1[0] == 0.0);
  CHECK(g.dw1[1] == 0.0);
  CHECK(g.dw2[0] == doctest::Approx(1.5 * 0.5).epsilon(1e-14));
  CHECK(g.dw2[1] == 0.0);  // x component is 0
}

TEST_CASE("swiglu gradients match central finite differences") {
  std::mt19937_64 rng(7);
  for (int inst = 0; inst < 8; ++inst) {
    SwiGluBlock blk = random_block(3, 4, 2, rng);
    Tensor x = randn({5, 3}, rng);
    Tensor target = randn({5, 2}, rng);
    QuantContext qc = wide_ctx();
    PrecisionPolicy pol;
    auto loss_fn = [&]() {
      Tensor y = blk.forward(x, pol, qc, "b", nullptr);
      return squared_error(y, target).value;
    };
    SwiGluBlock::Cache cache;
    Tensor y = blk.forward(x, pol, qc, "b", &cache);
    LossResult lr = squared_error(y, target);
    SwiGluBlock::Grads g;
    Tensor dx = blk.backward(lr.dinput, cache, pol, qc, "b", g);
    Tensor* params[] = {&blk.w1, &blk.w2, &blk.w3, &x};
    const Tensor* grads[] = {&g.dw1, &g.dw2, &g.dw3, &dx};
    GradCheckResult res = grad_check(loss_fn, params, grads, 1e-5);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("smooth swiglu with identity quantizer equals plain swiglu") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> logs(-6.0, 6.0);
  for (int inst = 0; inst < 10; ++inst) {
    SwiGluBlock blk = random_block(6, 9, 4, rng);
    Tensor x = randn({12, 6}, rng);
    ChannelScales s(9);
    for (auto& v : s) v = std::exp2(logs(rng)) * (0.5 + 0.5 * logs(rng) / 6.0 + 0.75);
    Tensor plain = swiglu_eval(x, blk);
    Tensor smooth = smooth_swiglu_eval(x, blk, s, /*quantize_out=*/false);
    REQUIRE(plain.shape == smooth.shape);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      const double denom = std::max(1e-30, std::fabs(plain[i]));
      CHECK(std::fabs(plain[i] - smooth[i]) / denom <= 1e-12);
    }
  }
}

TEST_CASE("zero input stays zero through the smooth path") {
  std::mt19937_64 rng(13);
  SwiGluBlock blk = random_block(4, 5, 3, rng);
  Tensor x({7, 4});
  ChannelScales s{0.1, 2.0, 7.5, 64.0, 1e-4};
  Tensor y = smooth_swiglu_eval(x, blk, s, true);
  for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("smooth scaling keeps the gate quantizer saturation free") {
  std::mt19937_64 rng(17);
  // heavy-tailed channels: some far beyond the E4M3 range
  SwiGluBlock blk = random_block(8, 6, 4, rng, 3.0);
  Tensor x = randn({64, 8}, rng, 8.0);

  // explicit check through the block's smooth path
  QuantContext qc;
  PrecisionPolicy pol;
  pol.matmul_io = QuantPolicyMode::none;  // isolate the gate quantizer
  pol.swiglu_out = SwigluOutQuant::per_channel;
  qc.begin_iteration(0);
  SwiGluBlock::Cache cache;
  (void)blk.forward(x, pol, qc, "b", &cache);
  CHECK(qc.iteration_traces().at("b.u").saturated == 0);
  CHECK(blk.channel_scales.size() == 6);

  // channel maxima at 2x max normal give scale 0.5 and no saturations
  Tensor u({2, 1});
  u.data = {2.0 * E4M3.max_normal, -E4M3.max_normal};
  ChannelScales s = per_channel_scales(u.span(), 2, 1, E4M3, 1.0);
  CHECK(s[0] == 0.5);
  QuantStats stats;
  SwiGluBlock tiny;
  tiny.w1 = Tensor::from({1, 1}, {1.0});
  tiny.w2 = Tensor::from({1, 1}, {100.0});  // swish ~ identity gate
  tiny.w3 = Tensor::from({1, 1}, {1.0});
  Tensor xin = Tensor::from({2, 1}, {2.0 * E4M3.max_normal, -E4M3.max_normal});
  (void)smooth_swiglu_eval(xin, tiny, {0.5}, true, &stats);
  CHECK(stats.saturated == 0);
}

TEST_CASE("delayed per-tensor scaling saturates on an amax spike") {
  std::mt19937_64 rng(19);
  SwiGluBlock blk = random_block(8, 6, 4, rng);
  QuantContext qc;
  PrecisionPolicy pol;
  pol.matmul_io = QuantPolicyMode::none;
  pol.swiglu_out = SwigluOutQuant::e4m3_delayed;
  Tensor x = randn({32, 8}, rng);
  for (int it = 0; it < 4; ++it) {
    qc.begin_iteration(it);
    (void)blk.forward(x, pol, qc, "b", nullptr);
    CHECK(qc.iteration_traces().at("b.u").saturated == 0);
  }
  qc.begin_iteration(4);
  Tensor spike = x;
  for (auto& v : spike.data) v *= 100.0;
  (void)blk.forward(spike, pol, qc, "b", nullptr);
  CHECK(qc.iteration_traces().at("b.u").saturated > 0);
}

TEST_CASE("fold_scales identity cases") {
  std::mt19937_64 rng(23);
  SwiGluBlock blk = random_block(5, 4, 3, rng);
  Tensor w1f, w3f;
  fold_scales_exact(blk, ChannelScales(4, 1.0), w1f, w3f);
  CHECK(w1f.data == blk.w1.data);
  CHECK(w3f.data == blk.w3.data);

  ChannelScales s{1.0, 2.0, 1.0, 1.0};
  fold_scales_exact(blk, s, w1f, w3f);
  for (std::size_t r = 0; r < 5; ++r)
    CHECK(w1f(r, 1) == 2.0 * blk.w1(r, 1));
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(w3f(1, j) == blk.w3(1, j) / 2.0);

  // composed function unchanged on random inputs
  Tensor x = randn({9, 5}, rng);
  SwiGluBlock folded{w1f, blk.w2, w3f, {}};
  Tensor y0 = swiglu_eval(x, blk);
  Tensor y1 = swiglu_eval(x, folded);
  for (std::size_t i = 0; i < y0.size(); ++i) {
    const double denom = std::max(1e-30, std::fabs(y0[i]));
    CHECK(std::fabs(y0[i] - y1[i]) / denom <= 1e-12);
  }

  ChannelScales crazy{1e300, 1.0, 1.0, 1.0};
  CHECK_THROWS_AS(fold_scales_exact(blk, crazy, w1f, w3f),
                  std::runtime_error);
}

TEST_CASE("folded inference tracks runtime scaling within one step") {
  std::mt19937_64 rng(29);
  for (int inst = 0; inst < 4; ++inst) {
    const std::size_t d = 8, h = 6, dout = 5, n = 24;
    SwiGluBlock blk = random_block(d, h, dout, rng, 2.0);
    Tensor x = randn({n, d}, rng, 2.0);

    // shared quantized inputs and gate weights
    auto q_jit = [&](const Tensor& t) {
      const double s = pow2_floor(jit_scale(t.span(), E4M3));
      ScaledTensor st = quantize(t.span(), t.shape, s, E4M3);
      Tensor out;
      out.shape = t.shape;
      out.data = dequantize(st);
      return out;
    };
    Tensor xq = q_jit(x);
    Tensor w1q = q_jit(blk.w1), w2q = q_jit(blk.w2), w3q = q_jit(blk.w3);

    // runtime path: per-channel scales from this batch, pow2 snapped
    Tensor pre1 = matmul(xq, w1q), pre2 = matmul(xq, w2q);
    Tensor u({n, h});
    for (std::size_t i = 0; i < u.size(); ++i)
      u[i] = pre1[i] * swish(pre2[i]);
    ChannelScales s = snap_pow2(per_channel_scales(u.span(), n, h, E4M3));
    ScaledTensor uq = quantize_per_channel(u.span(), n, h, s, E4M3);
    CHECK(uq.stats.saturated == 0);
    Tensor u_rt;
    u_rt.shape = u.shape;
    u_rt.data = dequantize(uq);  // already divided by s per channel
    Tensor y_rt = matmul(u_rt, w3q);

    // folded path: quantized folded weights, per-tensor gate quantizer
    SwiGluBlock qblk{w1q, w2q, w3q, {}};
    FoldedWeights fw = fold_scales(qblk, s, E4M3);
    Tensor w1f = fw.w1_values(), w3f = fw.w3_values();
    Tensor pre1f = matmul(xq, w1f);
    Tensor uf({n, h});
    for (std::size_t i = 0; i < uf.size(); ++i)
      uf[i] = pre1f[i] * swish(pre2[i]);
    const double su = pow2_floor(jit_scale(uf.span(), E4M3));
    ScaledTensor ufq = quantize(uf.span(), uf.shape, su, E4M3);
    Tensor uf_used;
    uf_used.shape = uf.shape;
    uf_used.data = dequantize(ufq);
    Tensor y_f = matmul(uf_used, w3f);

    // per-element one-step bound at the gate tensor
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < h; ++c) {
        const double r = u_rt(i, c);
        const double f = uf_used(i, c) / s[c];
        const double step =
            std::max(ulp_at(s[c] * r, E4M3), ulp_at(s[c] * f, E4M3)) / s[c];
        CHECK(std::fabs(r - f) <= step * (1.0 + 1e-12));
      }
    // propagated bound on the block output
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dout; ++j) {
        double budget = 0.0;
        for (std::size_t c = 0; c < h; ++c) {
          const double step =
              std::max(ulp_at(s[c] * u_rt(i, c), E4M3),
                       ulp_at(uf_used(i, c) * su, E4M3) / su) /
              s[c];
          budget += step * std::fabs(w3f(c, j) * s[c]);
        }
        CHECK(std::fabs(y_rt(i, j) - y_f(i, j)) <= budget * (1.0 + 1e-12) + 1e-300);
      }
  }
}

TEST_CASE("gelu block control") {
  QuantContext qc = wide_ctx();
  PrecisionPolicy pol;
  std::mt19937_64 rng(31);
  GeluBlock blk;
  blk.wa = randn({3, 5}, rng);
  blk.wb = randn({5, 2}, rng);

  Tensor zero({4, 3});
  Tensor y0 = blk.forward(zero, pol, qc, "g", nullptr);
  for (double v : y0.data) CHECK(v == 0.0);

  // at-most-linear growth, in contrast with the gated block
  for (double z = -40.0; z <= 40.0; z += 0.37)
    CHECK(std::fabs(gelu(z)) <= std::fabs(z) + 1e-15);

  for (int inst = 0; inst < 5; ++inst) {
    GeluBlock b2;
    b2.wa = randn({3, 4}, rng);
    b2.wb = randn({4, 2}, rng);
    Tensor x = randn({6, 3}, rng);
    Tensor target = randn({6, 2}, rng);
    auto loss_fn = [&]() {
      Tensor y = b2.forward(x, pol, qc, "g", nullptr);
      return squared_error(y, target).value;
    };
    GeluBlock::Cache cache;
    Tensor y = b2.forward(x, pol, qc, "g", &cache);
    LossResult lr = squared_error(y, target);
    GeluBlock::Grads g;
    Tensor dx = b2.backward(lr.dinput, cache, pol, qc, "g", g);
    Tensor* params[] = {&b2.wa, &b2.wb, &x};
    const Tensor* grads[] = {&g.dwa, &g.dwb, &dx};
    GradCheckResult res = grad_check(loss_fn, params, grads, 1e-5);
    CHECK(res.max_rel_error < 1e-4);
  }
}
