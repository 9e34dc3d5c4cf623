// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: builds the model and dataset described by a
// RunConfig, trains deterministically under the chosen precision policy
// and emits run artifacts (manifest.json, loss.csv, diagnostics.csv,
// checkpoint.bin) into a run directory.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fp8lab/adam.hpp"
#include "fp8lab/dataset.hpp"
#include "fp8lab/model.hpp"
#include "fp8lab/quant_context.hpp"

namespace fp8lab {

struct LrSchedule {
  double peak = 1e-3;
  bool cosine = true;
  std::int64_t warmup = 100;
  double floor_frac = 0.1;  // cosine decays to floor_frac * peak

  double at(std::int64_t step, std::int64_t total_steps) const;
};

enum class DatasetKind { corpus, regression, spike_stream };

const char* dataset_kind_str(DatasetKind k);
DatasetKind dataset_kind_from_str(const std::string& s);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::corpus;
  std::string corpus_path;
  std::size_t batch = 32;
  RegressionSpec regression;
  SpikeStreamSpec spike;
};

struct RunConfig {
  ModelConfig model;
  Precision precision = Precision::bf16_baseline;
  MomentFormat m_format = MomentFormat::fp32;
  MomentFormat v_format = MomentFormat::fp32;
  MasterFormat master = MasterFormat::fp32;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;  // decoupled decay via the optimizer
  LrSchedule lr;
  std::uint64_t seed = 1;
  DatasetConfig data;
  std::int64_t steps = 200;
  std::int64_t diagnostics_every = 10;
  QuantConfig quant;
  bool force_no_quant = false;
  int threads = 1;
  bool emit_histogram = true;
  std::string out_dir;       // empty: keep artifacts in memory only
  std::string resume_from;   // checkpoint path, empty: fresh start

  void validate() const;
  AdamConfig adam() const;
};

// Canonical key=value serialization; parsing it back and re-serializing
// reproduces the exact bytes. This text is the manifest's config echo.
std::string run_config_canonical(const RunConfig& cfg);
RunConfig run_config_from_kv(const std::string& text);
void run_config_set(RunConfig& cfg, const std::string& key,
                    const std::string& value);

struct RunResult {
  double final_loss = 0.0;
  bool diverged = false;
  std::int64_t steps_run = 0;
  std::vector<double> loss_curve;
  std::int64_t swiglu_out_saturated = 0;  // total at the gate-output quantizer
  std::int64_t m_underflow = 0;
  std::int64_t v_underflow = 0;
  std::int64_t v_saturated = 0;
  double wall_seconds = 0.0;
  std::string out_dir;
  std::string loss_csv;         // file contents (also written when out_dir set)
  std::string diagnostics_csv;
  std::string manifest_json;
};

RunResult run_training(const RunConfig& cfg);

std::string loss_curve_csv(const std::vector<double>& losses,
                           std::int64_t start_step = 0);

}  // namespace fp8lab
