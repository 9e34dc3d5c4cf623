// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fp8lab/checkpoint.hpp"
#include "fp8lab/grad_check.hpp"
#include "fp8lab/linear.hpp"
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

QuantContext wide_ctx() {
  QuantContext qc;
  qc.set_enabled(false);
  return qc;
}

}  // namespace

TEST_CASE("matmul shapes and determinism across thread counts") {
  std::mt19937_64 rng(1);
  Tensor a = randn({13, 7}, rng), b = randn({7, 9}, rng);
  Tensor bt = randn({9, 7}, rng), c = randn({13, 5}, rng);
  set_num_threads(1);
  Tensor y1 = matmul(a, b), y2 = matmul_bt(a, bt), y3 = matmul_ta(a, c);
  set_num_threads(4);
  Tensor z1 = matmul(a, b), z2 = matmul_bt(a, bt), z3 = matmul_ta(a, c);
  set_num_threads(1);
  CHECK(y1.data == z1.data);
  CHECK(y2.data == z2.data);
  CHECK(y3.data == z3.data);
  // definition spot checks
  double acc = 0.0;
  for (std::size_t k = 0; k < 7; ++k) acc += a(2, k) * b(k, 3);
  CHECK(y1(2, 3) == doctest::Approx(acc).epsilon(1e-15));
  CHECK_THROWS_AS((void)matmul(a, c), std::invalid_argument);
}

TEST_CASE("linear forward basics") {
  QuantContext qc = wide_ctx();
  LinearLayer layer;
  layer.W = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  layer.bias = Tensor::from({2}, {0.25, -0.5});

  Tensor x({3, 2});  // zeros
  Tensor y = linear_forward(x, layer, QuantPolicyMode::none, qc, "t");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y(i, 0) == 0.25);
    CHECK(y(i, 1) == -0.5);
  }

  layer.bias.reset();
  std::mt19937_64 rng(2);
  Tensor xr = randn({4, 2}, rng);
  Tensor yr = linear_forward(xr, layer, QuantPolicyMode::none, qc, "t");
  CHECK(yr.data == xr.data);  // identity weights, no quantization

  Tensor bad({4, 3});
  CHECK_THROWS_AS(
      (void)linear_forward(bad, layer, QuantPolicyMode::none, qc, "t"),
      std::invalid_argument);
}

TEST_CASE("fp8 policy with exactly representable values matches exact") {
  // all values on the E4M3 grid, amaxes hit max_normal so scales are 1
  QuantContext qc;
  LinearLayer layer;
  layer.W = Tensor::from({2, 2}, {448.0, 1.5, -2.0, 0.5});
  Tensor x = Tensor::from({2, 2}, {448.0, 1.0, -0.5, 2.0});
  qc.begin_iteration(0);
  Tensor y8 = linear_forward(x, layer, QuantPolicyMode::fp8_hybrid, qc, "t");
  QuantContext off = wide_ctx();
  Tensor yexact = linear_forward(x, layer, QuantPolicyMode::none, off, "t");
  CHECK(y8.data == yexact.data);
  CHECK(qc.total_saturated() == 0);
}

TEST_CASE("policy none is bitwise identical to plain matmul") {
  std::mt19937_64 rng(3);
  QuantContext qc = wide_ctx();
  LinearLayer layer;
  layer.W = randn({5, 4}, rng);
  Tensor x = randn({6, 4}, rng);
  Tensor y = linear_forward(x, layer, QuantPolicyMode::none, qc, "t");
  CHECK(y.data == matmul_bt(x, layer.W).data);
}

TEST_CASE("linear backward: zero grads and scalar product rule") {
  QuantContext qc = wide_ctx();
  LinearLayer layer;
  layer.W = Tensor::from({1, 1}, {3.0});
  Tensor x = Tensor::from({1, 1}, {2.0});
  LinearCache cache;
  (void)linear_forward(x, layer, QuantPolicyMode::none, qc, "t", &cache);

  Tensor dy0({1, 1});
  LinearGrads g0;
  Tensor dx0 = linear_backward(dy0, cache, layer, QuantPolicyMode::none, qc,
                               "t", g0);
  CHECK(dx0[0] == 0.0);
  CHECK(g0.dW[0] == 0.0);

  Tensor dy = Tensor::from({1, 1}, {1.5});
  LinearGrads g;
  Tensor dx =
      linear_backward(dy, cache, layer, QuantPolicyMode::none, qc, "t", g);
  CHECK(dx[0] == 3.0 * 1.5);   // w * dy
  CHECK(g.dW[0] == 2.0 * 1.5); // x * dy
}

TEST_CASE("linear + squared error gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 5; ++inst) {
    LinearLayer layer;
    layer.W = randn({4, 4}, rng);
    layer.bias = randn({4}, rng);
    Tensor x = randn({8, 4}, rng);
    Tensor target = randn({8, 4}, rng);

    QuantContext qc = wide_ctx();
    auto loss_fn = [&]() {
      Tensor y = linear_forward(x, layer, QuantPolicyMode::none, qc, "t");
      return squared_error(y, target).value;
    };
    LinearCache cache;
    Tensor y =
        linear_forward(x, layer, QuantPolicyMode::none, qc, "t", &cache);
    LossResult lr = squared_error(y, target);
    LinearGrads g;
    (void)linear_backward(lr.dinput, cache, layer, QuantPolicyMode::none, qc,
                          "t", g);
    Tensor* params[] = {&layer.W, &*layer.bias};
    const Tensor* grads[] = {&g.dW, &*g.dbias};
    GradCheckResult res = grad_check(loss_fn, params, grads, 1e-5);
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("input gradient of linear matches finite differences") {
  std::mt19937_64 rng(7);
  LinearLayer layer;
  layer.W = randn({4, 4}, rng);
  Tensor x = randn({4, 4}, rng);
  Tensor target = randn({4, 4}, rng);
  QuantContext qc = wide_ctx();
  auto loss_fn = [&]() {
    Tensor y = linear_forward(x, layer, QuantPolicyMode::none, qc, "t");
    return squared_error(y, target).value;
  };
  LinearCache cache;
  Tensor y = linear_forward(x, layer, QuantPolicyMode::none, qc, "t", &cache);
  LossResult lr = squared_error(y, target);
  LinearGrads g;
  Tensor dx = linear_backward(lr.dinput, cache, layer, QuantPolicyMode::none,
                              qc, "t", g);
  Tensor* params[] = {&x};
  const Tensor* grads[] = {&dx};
  GradCheckResult res = grad_check(loss_fn, params, grads, 1e-5);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("l2 penalty") {
  Tensor w = Tensor::from({2}, {1.0, -2.0});
  Tensor g({2});
  add_l2_penalty_grad(w, 0.0, g);
  CHECK(g.data == std::vector<double>{0.0, 0.0});
  add_l2_penalty_grad(w, 0.1, g);
  CHECK(g[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(-0.2).epsilon(1e-15));

  std::mt19937_64 rng(11);
  Tensor v = randn({37}, rng);
  const Tensor* ps[] = {&v};
  double direct = 0.0;
  for (double x : v.data) direct += x * x;
  CHECK(l2_penalty(ps, 0.35) ==
        doctest::Approx(0.5 * 0.35 * direct).epsilon(1e-14));
}

TEST_CASE("cross entropy values and gradient") {
  // uniform logits: loss is log(V)
  Tensor logits({2, 8});
  std::vector<int> targets{3, 5};
  LossResult lr = cross_entropy(logits, targets);
  CHECK(lr.value == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  std::mt19937_64 rng(13);
  Tensor l2 = randn({4, 6}, rng);
  std::vector<int> t2{0, 5, 2, 2};
  auto loss_fn = [&]() { return cross_entropy(l2, t2).value; };
  LossResult r2 = cross_entropy(l2, t2);
  Tensor* params[] = {&l2};
  const Tensor* grads[] = {&r2.dinput};
  GradCheckResult res = grad_check(loss_fn, params, grads, 1e-6);
  CHECK(res.max_rel_error < 1e-7);
  CHECK_THROWS_AS((void)cross_entropy(l2, std::vector<int>{0, 1}),
                  std::invalid_argument);
}

TEST_CASE("full-batch descent on a convex problem is non-increasing") {
  std::mt19937_64 rng(17);
  LinearLayer layer;
  layer.W = randn({3, 5}, rng, 0.1);
  Tensor x = randn({32, 5}, rng);
  Tensor wt = randn({3, 5}, rng);
  Tensor target = matmul_bt(x, wt);
  QuantContext qc = wide_ctx();
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    LinearCache cache;
    Tensor y =
        linear_forward(x, layer, QuantPolicyMode::none, qc, "t", &cache);
    LossResult lr = squared_error(y, target);
    CHECK(lr.value <= prev);
    prev = lr.value;
    LinearGrads g;
    (void)linear_backward(lr.dinput, cache, layer, QuantPolicyMode::none, qc,
                          "t", g);
    for (std::size_t i = 0; i < layer.W.size(); ++i)
      layer.W[i] -= 0.05 * g.dW[i];
  }
  CHECK(prev < 0.1);
}

TEST_CASE("checkpoint container round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fp8lab_ck_test";
  fs::create_directories(dir);
  const std::string path = (dir / "state.bin").string();

  std::mt19937_64 rng(19);
  Tensor t = randn({3, 4}, rng);
  const FormatSpec& e5m2 = FormatSpec::get(FormatName::e5m2);
  ScaledTensor st =
      quantize(t.span(), t.shape, jit_scale(t.span(), e5m2), e5m2);
  Checkpoint ck;
  ck.flags = Checkpoint::kFoldedFlag;
  ck.records.push_back(CheckpointRecord::tensor("model.w", t));
  ck.records.push_back(CheckpointRecord::scaled("opt.w.v", st));
  ck.records.push_back(CheckpointRecord::scalar_u64("opt.step", 42));
  write_checkpoint(path, ck);

  Checkpoint back = read_checkpoint(path);
  CHECK(back.flags == Checkpoint::kFoldedFlag);
  CHECK(back.records.size() == 3);
  CHECK(back.require("model.w").as_tensor().data == t.data);
  CHECK(back.require("model.w").as_tensor().shape == t.shape);
  const ScaledTensor sb = back.require("opt.w.v").as_scaled();
  CHECK(sb.codes == st.codes);
  CHECK(sb.scales == st.scales);
  CHECK(sb.format == st.format);
  CHECK(back.require("opt.step").as_u64() == 42);
  CHECK(back.find("missing") == nullptr);

  // writing the parsed checkpoint again reproduces the bytes
  const std::string path2 = (dir / "state2.bin").string();
  write_checkpoint(path2, back);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  fs::remove_all(dir);
}
