// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/experiments.hpp"

#include <charconv>
#include <cmath>

#include "fp8lab/diagnostics.hpp"

namespace fp8lab {

namespace {

std::string num(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

std::string AlignmentReport::csv() const {
  std::string out = "channel,cos_w1w2,norm_w1,norm_w2,mean_abs_w2x\n";
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& ch = channels[c];
    out += std::to_string(c) + ',' + num(ch.cos) + ',' + num(ch.norm_w1) +
           ',' + num(ch.norm_w2) + ',' + num(ch.mean_abs_w2x) + '\n';
  }
  return out;
}

AlignmentReport alignment_experiment(const AlignmentConfig& cfg) {
  SwiGluRegressionNet net(cfg.in_dim, cfg.hidden, cfg.seed);
  const std::size_t n_params = net.n_params();
  RegressionSpec spec;
  spec.in_dim = cfg.in_dim;
  spec.teacher_hidden = cfg.teacher_hidden;
  spec.input_scale = cfg.input_scale;
  spec.teacher_scale = cfg.teacher_scale;
  spec.noise = cfg.noise;
  spec.n_samples = cfg.n_samples ? cfg.n_samples : 50 * n_params;
  RegressionData data = make_regression(cfg.seed, spec);

  AdamConfig acfg;  // fp32 moments: the theorem is about optimization
  Tensor* params[] = {&net.block.w1, &net.block.w2, &net.block.w3};
  AdamState states[3] = {AdamState::init(params[0]->size(), acfg),
                         AdamState::init(params[1]->size(), acfg),
                         AdamState::init(params[2]->size(), acfg)};

  AlignmentReport rep;
  rep.n_params = n_params;
  rep.n_samples = spec.n_samples;
  SwiGluBlock::Grads grads;
  double gnorm = 0.0, loss = 0.0;
  std::int64_t step = 0;
  for (; step < cfg.max_steps; ++step) {
    loss = net.loss_and_grads(data.inputs, data.targets, cfg.mu, grads);
    gnorm = SwiGluRegressionNet::grad_norm(grads);
    if (gnorm < cfg.grad_tol) break;
    // cosine decay to a small floor keeps Adam from orbiting the optimum
    const double progress = double(step) / double(cfg.max_steps);
    const double lr =
        cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
    const Tensor* gs[] = {&grads.dw1, &grads.dw2, &grads.dw3};
    for (int i = 0; i < 3; ++i)
      adam_step(*params[i], *gs[i], states[i], acfg, lr);
  }
  rep.reached_tol = gnorm < cfg.grad_tol;
  rep.steps = step;
  rep.final_grad_norm = gnorm;
  rep.final_loss = loss;

  const std::size_t d = cfg.in_dim, h = cfg.hidden, n = spec.n_samples;
  rep.channels.resize(h);
  std::vector<double> c1(d), c2(d);
  for (std::size_t c = 0; c < h; ++c) {
    for (std::size_t r = 0; r < d; ++r) {
      c1[r] = net.block.w1(r, c);
      c2[r] = net.block.w2(r, c);
    }
    auto& ch = rep.channels[c];
    ch.cos = channel_correlation(c1, c2);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      s1 += c1[r] * c1[r];
      s2 += c2[r] * c2[r];
    }
    ch.norm_w1 = std::sqrt(s1);
    ch.norm_w2 = std::sqrt(s2);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += data.inputs(i, r) * c2[r];
      acc += std::fabs(dot);
    }
    ch.mean_abs_w2x = acc / double(n);
  }
  return rep;
}

const OptimizerSweepEntry* OptimizerSweepReport::find(MomentFormat m,
                                                      MomentFormat v) const {
  for (const auto& e : combos)
    if (e.m_format == m && e.v_format == v) return &e;
  return nullptr;
}

std::string OptimizerSweepReport::csv() const {
  std::string out =
      "m_format,v_format,final_loss,diverged,m_underflow,v_underflow,"
      "v_saturated\n";
  auto row = [&out](const OptimizerSweepEntry& e) {
    out += std::string(moment_format_str(e.m_format)) + ',' +
           moment_format_str(e.v_format) + ',' + num(e.final_loss) + ',' +
           (e.diverged ? "1" : "0") + ',' + std::to_string(e.m_underflow) +
           ',' + std::to_string(e.v_underflow) + ',' +
           std::to_string(e.v_saturated) + '\n';
  };
  row(baseline);
  for (const auto& e : combos) row(e);
  return out;
}

OptimizerSweepReport optimizer_sweep(const RunConfig& base) {
  OptimizerSweepReport rep;
  auto run_one = [&base](MomentFormat m, MomentFormat v,
                         const std::string& subdir) {
    RunConfig cfg = base;
    cfg.m_format = m;
    cfg.v_format = v;
    if (!base.out_dir.empty()) cfg.out_dir = base.out_dir + "/" + subdir;
    const RunResult r = run_training(cfg);
    OptimizerSweepEntry e;
    e.m_format = m;
    e.v_format = v;
    e.final_loss = r.final_loss;
    e.diverged = r.diverged;
    e.m_underflow = r.m_underflow;
    e.v_underflow = r.v_underflow;
    e.v_saturated = r.v_saturated;
    return e;
  };
  rep.baseline = run_one(MomentFormat::fp32, MomentFormat::fp32, "fp32_fp32");
  for (MomentFormat m : {MomentFormat::e4m3, MomentFormat::e5m2})
    for (MomentFormat v : {MomentFormat::e4m3, MomentFormat::e5m2})
      rep.combos.push_back(
          run_one(m, v, std::string(moment_format_str(m)) + "_" +
                            moment_format_str(v)));
  return rep;
}

}  // namespace fp8lab
