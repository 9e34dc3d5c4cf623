// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fp8lab/checkpoint.hpp"
#include "fp8lab/diagnostics.hpp"

namespace fp8lab {

namespace {

std::string num(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("bad number: " + s);
  return v;
}

std::int64_t parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("bad integer: " + s);
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("bad bool: " + s);
}

const char* master_format_str(MasterFormat f) {
  return f == MasterFormat::fp32 ? "fp32" : "fp16";
}

MasterFormat master_format_from_str(const std::string& s) {
  if (s == "fp32") return MasterFormat::fp32;
  if (s == "fp16") return MasterFormat::fp16;
  throw std::invalid_argument("unknown master format: " + s);
}

const char* reduction_str(AmaxReduction r) {
  return r == AmaxReduction::max ? "max" : "most_recent";
}

AmaxReduction reduction_from_str(const std::string& s) {
  if (s == "max") return AmaxReduction::max;
  if (s == "most_recent") return AmaxReduction::most_recent;
  throw std::invalid_argument("unknown amax reduction: " + s);
}

}  // namespace

double LrSchedule::at(std::int64_t step, std::int64_t total_steps) const {
  if (peak <= 0.0) return 0.0;
  if (warmup > 0 && step < warmup)
    return peak * double(step + 1) / double(warmup);
  if (!cosine) return peak;
  const double span = double(std::max<std::int64_t>(1, total_steps - warmup));
  const double progress = double(step - warmup) / span;
  const double shape = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (floor_frac + (1.0 - floor_frac) * shape);
}

const char* dataset_kind_str(DatasetKind k) {
  switch (k) {
    case DatasetKind::corpus: return "corpus";
    case DatasetKind::regression: return "regression";
    case DatasetKind::spike_stream: return "spike_stream";
  }
  return "?";
}

DatasetKind dataset_kind_from_str(const std::string& s) {
  if (s == "corpus") return DatasetKind::corpus;
  if (s == "regression") return DatasetKind::regression;
  if (s == "spike_stream") return DatasetKind::spike_stream;
  throw std::invalid_argument("unknown dataset kind: " + s);
}

void RunConfig::validate() const {
  model.validate();
  if (steps <= 0) throw std::invalid_argument("steps must be positive");
  if (data.batch == 0) throw std::invalid_argument("batch must be positive");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (data.kind == DatasetKind::corpus && data.corpus_path.empty())
    throw std::invalid_argument("corpus dataset needs corpus_path");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::invalid_argument("betas must be in [0, 1)");
  if (model.mu > 0.0 && weight_decay > 0.0)
    throw std::invalid_argument("use coupled mu or decoupled decay, not both");
  // instantiating the policy validates precision/activation compatibility
  (void)policy_for(precision, model.activation, force_no_quant);
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.m_format = m_format;
  a.v_format = v_format;
  a.master = master;
  a.weight_decay = weight_decay;
  return a;
}

std::string run_config_canonical(const RunConfig& c) {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  };
  kv("precision", precision_str(c.precision));
  kv("activation", activation_str(c.model.activation));
  kv("vocab", std::to_string(c.model.vocab));
  kv("context", std::to_string(c.model.context));
  kv("d_embed", std::to_string(c.model.d_embed));
  kv("hidden", std::to_string(c.model.hidden));
  kv("n_blocks", std::to_string(c.model.n_blocks));
  kv("mu", num(c.model.mu));
  kv("m_format", moment_format_str(c.m_format));
  kv("v_format", moment_format_str(c.v_format));
  kv("master_format", master_format_str(c.master));
  kv("beta1", num(c.beta1));
  kv("beta2", num(c.beta2));
  kv("eps", num(c.eps));
  kv("weight_decay", num(c.weight_decay));
  kv("peak_lr", num(c.lr.peak));
  kv("cosine", c.lr.cosine ? "1" : "0");
  kv("warmup", std::to_string(c.lr.warmup));
  kv("lr_floor_frac", num(c.lr.floor_frac));
  kv("seed", std::to_string(c.seed));
  kv("dataset", dataset_kind_str(c.data.kind));
  kv("corpus_path", c.data.corpus_path);
  kv("batch", std::to_string(c.data.batch));
  kv("reg_samples", std::to_string(c.data.regression.n_samples));
  kv("reg_in_dim", std::to_string(c.data.regression.in_dim));
  kv("reg_teacher_hidden", std::to_string(c.data.regression.teacher_hidden));
  kv("reg_input_scale", num(c.data.regression.input_scale));
  kv("reg_teacher_scale", num(c.data.regression.teacher_scale));
  kv("reg_noise", num(c.data.regression.noise));
  kv("spike_in_dim", std::to_string(c.data.spike.in_dim));
  kv("spike_teacher_hidden", std::to_string(c.data.spike.teacher_hidden));
  kv("spike_factor", num(c.data.spike.spike_factor));
  kv("spike_iteration", std::to_string(c.data.spike.spike_iteration));
  kv("steps", std::to_string(c.steps));
  kv("diagnostics_every", std::to_string(c.diagnostics_every));
  kv("margin", num(c.quant.margin));
  kv("history_capacity", std::to_string(c.quant.history_capacity));
  kv("amax_reduction", reduction_str(c.quant.reduction));
  kv("channel_scale_cadence", std::to_string(c.quant.channel_scale_cadence));
  kv("snap_scales_pow2", c.quant.snap_scales_pow2 ? "1" : "0");
  kv("force_no_quant", c.force_no_quant ? "1" : "0");
  kv("threads", std::to_string(c.threads));
  kv("emit_histogram", c.emit_histogram ? "1" : "0");
  kv("out_dir", c.out_dir);
  kv("resume_from", c.resume_from);
  return out;
}

void run_config_set(RunConfig& c, const std::string& key,
                    const std::string& v) {
  if (key == "precision") c.precision = precision_from_str(v);
  else if (key == "activation") c.model.activation = activation_from_str(v);
  else if (key == "vocab") c.model.vocab = std::size_t(parse_int(v));
  else if (key == "context") c.model.context = std::size_t(parse_int(v));
  else if (key == "d_embed") c.model.d_embed = std::size_t(parse_int(v));
  else if (key == "hidden") c.model.hidden = std::size_t(parse_int(v));
  else if (key == "n_blocks") c.model.n_blocks = std::size_t(parse_int(v));
  else if (key == "mu") c.model.mu = parse_double(v);
  else if (key == "m_format") c.m_format = moment_format_from_str(v);
  else if (key == "v_format") c.v_format = moment_format_from_str(v);
  else if (key == "master_format") c.master = master_format_from_str(v);
  else if (key == "beta1") c.beta1 = parse_double(v);
  else if (key == "beta2") c.beta2 = parse_double(v);
  else if (key == "eps") c.eps = parse_double(v);
  else if (key == "weight_decay") c.weight_decay = parse_double(v);
  else if (key == "peak_lr") c.lr.peak = parse_double(v);
  else if (key == "cosine") c.lr.cosine = parse_bool(v);
  else if (key == "warmup") c.lr.warmup = parse_int(v);
  else if (key == "lr_floor_frac") c.lr.floor_frac = parse_double(v);
  else if (key == "seed") c.seed = std::uint64_t(parse_int(v));
  else if (key == "dataset") c.data.kind = dataset_kind_from_str(v);
  else if (key == "corpus_path") c.data.corpus_path = v;
  else if (key == "batch") c.data.batch = std::size_t(parse_int(v));
  else if (key == "reg_samples") c.data.regression.n_samples = std::size_t(parse_int(v));
  else if (key == "reg_in_dim") c.data.regression.in_dim = std::size_t(parse_int(v));
  else if (key == "reg_teacher_hidden") c.data.regression.teacher_hidden = std::size_t(parse_int(v));
  else if (key == "reg_input_scale") c.data.regression.input_scale = parse_double(v);
  else if (key == "reg_teacher_scale") c.data.regression.teacher_scale = parse_double(v);
  else if (key == "reg_noise") c.data.regression.noise = parse_double(v);
  else if (key == "spike_in_dim") c.data.spike.in_dim = std::size_t(parse_int(v));
  else if (key == "spike_teacher_hidden") c.data.spike.teacher_hidden = std::size_t(parse_int(v));
  else if (key == "spike_factor") c.data.spike.spike_factor = parse_double(v);
  else if (key == "spike_iteration") c.data.spike.spike_iteration = parse_int(v);
  else if (key == "steps") c.steps = parse_int(v);
  else if (key == "diagnostics_every") c.diagnostics_every = parse_int(v);
  else if (key == "margin") c.quant.margin = parse_double(v);
  else if (key == "history_capacity") c.quant.history_capacity = std::size_t(parse_int(v));
  else if (key == "amax_reduction") c.quant.reduction = reduction_from_str(v);
  else if (key == "channel_scale_cadence") c.quant.channel_scale_cadence = int(parse_int(v));
  else if (key == "snap_scales_pow2") c.quant.snap_scales_pow2 = parse_bool(v);
  else if (key == "force_no_quant") c.force_no_quant = parse_bool(v);
  else if (key == "threads") c.threads = int(parse_int(v));
  else if (key == "emit_histogram") c.emit_histogram = parse_bool(v);
  else if (key == "out_dir") c.out_dir = v;
  else if (key == "resume_from") c.resume_from = v;
  else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig run_config_from_kv(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      // blank or comment-only line
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    run_config_set(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

std::string loss_curve_csv(const std::vector<double>& losses,
                           std::int64_t start_step) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out += std::to_string(start_step + std::int64_t(i));
    out += ',';
    out += num(losses[i]);
    out += '\n';
  }
  return out;
}

namespace {

struct TrainingSetup {
  std::unique_ptr<ByteLmModel> lm;
  std::unique_ptr<RegressionModel> rm;
  std::optional<ByteCorpus> corpus;
  std::optional<RegressionData> regression;
  std::optional<SpikeStream> spike;
  std::vector<Tensor*> params;
  std::vector<std::string> names;
};

TrainingSetup build_setup(const RunConfig& cfg) {
  TrainingSetup s;
  switch (cfg.data.kind) {
    case DatasetKind::corpus: {
      s.corpus = ByteCorpus::load(cfg.data.corpus_path);
      s.lm = std::make_unique<ByteLmModel>(cfg.model, cfg.seed);
      s.params = s.lm->parameters();
      s.names = s.lm->parameter_names();
      break;
    }
    case DatasetKind::regression: {
      s.regression = make_regression(cfg.seed, cfg.data.regression);
      s.rm = std::make_unique<RegressionModel>(
          cfg.data.regression.in_dim, cfg.model.hidden,
          cfg.model.activation, cfg.seed, cfg.model.mu);
      s.params = s.rm->parameters();
      s.names = s.rm->parameter_names();
      break;
    }
    case DatasetKind::spike_stream: {
      SpikeStreamSpec spec = cfg.data.spike;
      spec.batch = cfg.data.batch;
      s.spike.emplace(cfg.seed, spec);
      s.rm = std::make_unique<RegressionModel>(spec.in_dim, cfg.model.hidden,
                                               cfg.model.activation, cfg.seed,
                                               cfg.model.mu);
      s.params = s.rm->parameters();
      s.names = s.rm->parameter_names();
      break;
    }
  }
  return s;
}

void save_training_state(const std::string& path, const TrainingSetup& s,
                         const std::vector<AdamState>& states,
                         const RunConfig& cfg, const QuantContext& qc,
                         std::int64_t next_step) {
  Checkpoint ck;
  for (std::size_t i = 0; i < s.params.size(); ++i)
    ck.records.push_back(
        CheckpointRecord::tensor("model." + s.names[i], *s.params[i]));
  const AdamConfig acfg = cfg.adam();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string base = "opt." + s.names[i];
    if (acfg.m_format == MomentFormat::fp32) {
      ck.records.push_back(
          CheckpointRecord::vector_f64(base + ".m", states[i].m_wide));
    } else {
      ck.records.push_back(
          CheckpointRecord::scaled(base + ".m", states[i].m_q));
    }
    if (acfg.v_format == MomentFormat::fp32) {
      ck.records.push_back(
          CheckpointRecord::vector_f64(base + ".v", states[i].v_wide));
    } else {
      ck.records.push_back(
          CheckpointRecord::scaled(base + ".v", states[i].v_q));
    }
  }
  ck.records.push_back(CheckpointRecord::scalar_u64(
      "opt.step", states.empty() ? 0 : std::uint64_t(states[0].step)));
  ck.records.push_back(
      CheckpointRecord::scalar_u64("next_step", std::uint64_t(next_step)));
  for (const auto& [tag, hist] : qc.histories()) {
    std::vector<double> w(hist.window().begin(), hist.window().end());
    ck.records.push_back(CheckpointRecord::vector_f64("amax." + tag, w));
  }
  for (const auto& [tag, scales] : qc.channel_scale_cache()) {
    ck.records.push_back(
        CheckpointRecord::vector_f64("chscales." + tag, scales));
  }
  write_checkpoint(path, ck);
}

std::int64_t load_training_state(const std::string& path, TrainingSetup& s,
                                 std::vector<AdamState>& states,
                                 const RunConfig& cfg, QuantContext& qc) {
  const Checkpoint ck = read_checkpoint(path);
  const AdamConfig acfg = cfg.adam();
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    Tensor t = ck.require("model." + s.names[i]).as_tensor();
    if (t.shape != s.params[i]->shape)
      throw std::runtime_error("resume: shape mismatch for " + s.names[i]);
    *s.params[i] = std::move(t);
  }
  const std::uint64_t step = ck.require("opt.step").as_u64();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string base = "opt." + s.names[i];
    if (acfg.m_format == MomentFormat::fp32) {
      states[i].m_wide = ck.require(base + ".m").f64;
    } else {
      states[i].m_q = ck.require(base + ".m").as_scaled();
    }
    if (acfg.v_format == MomentFormat::fp32) {
      states[i].v_wide = ck.require(base + ".v").f64;
    } else {
      states[i].v_q = ck.require(base + ".v").as_scaled();
    }
    states[i].step = std::int64_t(step);
  }
  for (const auto& r : ck.records) {
    if (r.name.rfind("amax.", 0) == 0) {
      AmaxHistory h(cfg.quant.history_capacity, cfg.quant.reduction);
      for (double v : r.f64) h.update(v);
      qc.restore_history(r.name.substr(5), h);
    } else if (r.name.rfind("chscales.", 0) == 0) {
      const std::int64_t next = std::int64_t(ck.require("next_step").as_u64());
      qc.restore_channel_scales(r.name.substr(9), r.f64,
                                next - 1);
    }
  }
  return std::int64_t(ck.require("next_step").as_u64());
}

}  // namespace

RunResult run_training(const RunConfig& cfg) {
  cfg.validate();
  set_num_threads(cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();

  const PrecisionPolicy pol =
      policy_for(cfg.precision, cfg.model.activation, cfg.force_no_quant);
  QuantContext qc(cfg.quant);
  if (cfg.force_no_quant) qc.set_enabled(false);
  DiagnosticsRecord diag;

  TrainingSetup setup = build_setup(cfg);
  const AdamConfig acfg = cfg.adam();
  std::vector<AdamState> states;
  states.reserve(setup.params.size());
  for (Tensor* p : setup.params)
    states.push_back(AdamState::init(p->size(), acfg));

  std::int64_t start_step = 0;
  if (!cfg.resume_from.empty())
    start_step = load_training_state(cfg.resume_from, setup, states, cfg, qc);

  RunResult res;
  std::vector<Tensor> grads;
  std::vector<int> lm_inputs, lm_targets;
  const bool gated = cfg.model.activation != Activation::gelu;

  auto snapshot_diagnostics = [&](std::int64_t step) {
    for (const auto& [tag, trace] : qc.iteration_traces())
      diag.record_trace(step, tag, trace);
    if (!gated) return;
    if (setup.lm) {
      for (std::size_t b = 0; b < setup.lm->swiglu_blocks().size(); ++b) {
        const auto& blk = setup.lm->swiglu_blocks()[b];
        const Tensor& u = setup.lm->last_gate_output(b);
        diag.record_channels(step, "block" + std::to_string(b), blk.w1,
                             blk.w2, u.size() ? &u : nullptr);
      }
    } else if (setup.rm && setup.rm->swiglu_block()) {
      const auto* blk = setup.rm->swiglu_block();
      const Tensor& u = setup.rm->last_gate_output();
      diag.record_channels(step, "block0", blk->w1, blk->w2,
                           u.size() ? &u : nullptr);
    }
  };

  std::int64_t step = start_step;
  for (; step < cfg.steps; ++step) {
    qc.begin_iteration(step);
    double loss = 0.0;
    if (setup.lm) {
      setup.corpus->sample(cfg.seed, step, cfg.data.batch, cfg.model.context,
                           lm_inputs, lm_targets);
      loss = setup.lm->loss_and_grads(lm_inputs, lm_targets, cfg.data.batch,
                                      pol, qc, grads);
    } else {
      Tensor inputs, targets;
      if (setup.spike) {
        setup.spike->batch(step, inputs, targets);
      } else {
        inputs = setup.regression->inputs;
        targets = setup.regression->targets;
      }
      loss = setup.rm->loss_and_grads(inputs, targets, pol, qc, grads);
    }
    res.loss_curve.push_back(loss);

    bool finite = std::isfinite(loss);
    for (const Tensor& g : grads)
      if (finite && !g.all_finite()) finite = false;
    if (!finite) {
      res.diverged = true;
      snapshot_diagnostics(step);
      Tensor bad({1});
      bad[0] = std::numeric_limits<double>::quiet_NaN();
      diag.record_amax("loss", step, bad);
      ++step;
      break;
    }

    const bool last = step == cfg.steps - 1;
    if (cfg.diagnostics_every > 0 &&
        (step % cfg.diagnostics_every == 0 || last))
      snapshot_diagnostics(step);

    const double lr = cfg.lr.at(step, cfg.steps);
    for (std::size_t i = 0; i < setup.params.size(); ++i)
      adam_step(*setup.params[i], grads[i], states[i], acfg, lr);
  }

  res.steps_run = step - start_step;
  res.final_loss = res.loss_curve.empty() ? 0.0 : res.loss_curve.back();
  res.swiglu_out_saturated = qc.total_saturated(".u");
  for (const auto& st : states) {
    res.m_underflow += st.m_stats.underflowed_to_zero;
    res.v_underflow += st.v_stats.underflowed_to_zero;
    res.v_saturated += st.v_stats.saturated;
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  res.loss_csv = loss_curve_csv(res.loss_curve, start_step);
  res.diagnostics_csv = diag.csv();

  nlohmann::json manifest;
  manifest["config"] = run_config_canonical(cfg);
  manifest["final_loss"] = res.final_loss;
  manifest["diverged"] = res.diverged;
  manifest["steps_run"] = res.steps_run;
  manifest["start_step"] = start_step;
  manifest["wall_seconds"] = res.wall_seconds;
  manifest["n_params"] =
      setup.lm ? setup.lm->n_params() : setup.rm->n_params();
  manifest["swiglu_out_saturated"] = res.swiglu_out_saturated;
  manifest["m_underflow"] = res.m_underflow;
  manifest["v_underflow"] = res.v_underflow;
  manifest["v_saturated"] = res.v_saturated;
  res.manifest_json = manifest.dump(2) + "\n";

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    auto write = [&](const std::string& name, const std::string& body) {
      std::ofstream f(fs::path(cfg.out_dir) / name,
                      std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write " + name);
      f.write(body.data(), std::streamsize(body.size()));
    };
    write("loss.csv", res.loss_csv);
    write("diagnostics.csv", res.diagnostics_csv);
    write("manifest.json", res.manifest_json);
    save_training_state((fs::path(cfg.out_dir) / "checkpoint.bin").string(),
                        setup, states, cfg, qc, step);
    if (cfg.emit_histogram && gated) {
      // |w2 . x| histogram of the highest-|cos| channel of block 0
      const SwiGluBlock* blk = setup.lm
                                   ? &setup.lm->swiglu_blocks().front()
                                   : setup.rm->swiglu_block();
      const Tensor* x = nullptr;
      if (setup.lm && setup.lm->last_gate_output(0).size())
        x = &setup.lm->last_block_input(0);
      else if (setup.rm && setup.rm->last_input().size())
        x = &setup.rm->last_input();
      if (blk && x) {
        std::size_t best = 0;
        double best_cos = -1.0;
        std::vector<double> c1(blk->w1.rows()), c2(blk->w2.rows());
        for (std::size_t c = 0; c < blk->w1.cols(); ++c) {
          for (std::size_t r = 0; r < blk->w1.rows(); ++r) {
            c1[r] = blk->w1(r, c);
            c2[r] = blk->w2(r, c);
          }
          const double cc = std::fabs(channel_correlation(c1, c2));
          if (cc > best_cos) {
            best_cos = cc;
            best = c;
          }
        }
        std::vector<double> w2col(blk->w2.rows());
        for (std::size_t r = 0; r < blk->w2.rows(); ++r)
          w2col[r] = blk->w2(r, best);
        write("hist_final.csv",
              histogram_csv(input_magnitude_histogram(*x, w2col)));
      }
    }
    res.out_dir = cfg.out_dir;
  }
  return res;
}

}  // namespace fp8lab
