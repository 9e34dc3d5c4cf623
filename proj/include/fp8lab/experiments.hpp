// SPDX-License-Identifier: Apache-2.0
//
// The two scripted experiments: the weight-alignment study (train a small
// gated regression net with coupled l2 to near-stationarity and measure
// per-channel w1/w2 correlation against gate input magnitude) and the
// optimizer-moment format sweep.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fp8lab/train.hpp"

namespace fp8lab {

struct AlignmentConfig {
  std::uint64_t seed = 1;
  double mu = 1e-3;
  std::size_t in_dim = 4;
  std::size_t hidden = 8;
  // 0: choose 50x the parameter count
  std::size_t n_samples = 0;
  std::size_t teacher_hidden = 16;
  double input_scale = 3.0;
  double teacher_scale = 3.0;
  double noise = 0.1;
  std::int64_t max_steps = 50000;
  double grad_tol = 1e-5;
  double lr = 3e-3;
};

struct AlignmentChannel {
  double cos = 0.0;        // cos(w1_i, w2_i) at the end of training
  double norm_w1 = 0.0;
  double norm_w2 = 0.0;
  double mean_abs_w2x = 0.0;  // mean |w2_i . x| over the dataset
};

struct AlignmentReport {
  std::vector<AlignmentChannel> channels;
  bool reached_tol = false;
  std::int64_t steps = 0;
  double final_grad_norm = 0.0;
  double final_loss = 0.0;
  std::size_t n_params = 0;
  std::size_t n_samples = 0;

  std::string csv() const;  // one row per channel
};

AlignmentReport alignment_experiment(const AlignmentConfig& cfg);

struct OptimizerSweepEntry {
  MomentFormat m_format = MomentFormat::fp32;
  MomentFormat v_format = MomentFormat::fp32;
  double final_loss = 0.0;
  bool diverged = false;
  std::int64_t m_underflow = 0;
  std::int64_t v_underflow = 0;
  std::int64_t v_saturated = 0;
};

struct OptimizerSweepReport {
  OptimizerSweepEntry baseline;  // fp32 moments
  std::vector<OptimizerSweepEntry> combos;  // the four fp8 pairings

  const OptimizerSweepEntry* find(MomentFormat m, MomentFormat v) const;
  std::string csv() const;
};

// Runs the base config with fp32 moments and with every (m, v) pairing
// from {e4m3, e5m2}^2. Divergence is recorded, not thrown.
OptimizerSweepReport optimizer_sweep(const RunConfig& base);

}  // namespace fp8lab
