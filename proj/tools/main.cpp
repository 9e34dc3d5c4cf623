// SPDX-License-Identifier: Apache-2.0
//
// fp8lab command line: deterministic training runs, the optimizer-moment
// sweep, the weight-alignment experiment, format code-table dumps and run
// comparison.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fp8lab/experiments.hpp"
#include "fp8lab/formats.hpp"
#include "fp8lab/train.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct ConfigCli {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value

  fp8lab::RunConfig materialize() const {
    fp8lab::RunConfig cfg;
    if (!config_file.empty())
      cfg = fp8lab::run_config_from_kv(slurp(config_file));
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("override must be key=value: " + kv);
      fp8lab::run_config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }

  void attach(CLI::App* app) {
    app->add_option("--config", config_file,
                    "key = value config file (keys match --set names)");
    app->add_option("--set", overrides,
                    "config override, key=value; repeatable")
        ->take_all();
  }
};

int cmd_run(const ConfigCli& cli) {
  fp8lab::RunConfig cfg = cli.materialize();
  const fp8lab::RunResult res = fp8lab::run_training(cfg);
  std::cout << "steps_run " << res.steps_run << "\n"
            << "final_loss " << res.final_loss << "\n"
            << "diverged " << (res.diverged ? 1 : 0) << "\n"
            << "swiglu_out_saturated " << res.swiglu_out_saturated << "\n"
            << "v_underflow " << res.v_underflow << "\n"
            << "wall_seconds " << res.wall_seconds << "\n";
  if (!res.out_dir.empty())
    std::cout << "artifacts " << res.out_dir << "\n";
  return res.diverged ? 2 : 0;
}

int cmd_sweep(const ConfigCli& cli) {
  fp8lab::RunConfig cfg = cli.materialize();
  const fp8lab::OptimizerSweepReport rep = fp8lab::optimizer_sweep(cfg);
  std::cout << rep.csv();
  if (!cfg.out_dir.empty()) {
    std::ofstream f(std::filesystem::path(cfg.out_dir) / "sweep.csv",
                    std::ios::trunc);
    f << rep.csv();
    std::cout << "artifacts " << cfg.out_dir << "\n";
  }
  return 0;
}

int cmd_alignment(const fp8lab::AlignmentConfig& cfg,
                  const std::string& out_path) {
  const fp8lab::AlignmentReport rep = fp8lab::alignment_experiment(cfg);
  std::cout << "steps " << rep.steps << "\n"
            << "final_grad_norm " << rep.final_grad_norm << "\n"
            << "reached_tol " << (rep.reached_tol ? 1 : 0) << "\n"
            << "final_loss " << rep.final_loss << "\n"
            << rep.csv();
  if (!rep.reached_tol)
    std::cout << "note: stopped on step budget before the gradient tolerance\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << rep.csv();
  }
  return 0;
}

int cmd_format_dump(const std::string& name, const std::string& out_path) {
  const auto& fmt = fp8lab::FormatSpec::get(fp8lab::format_name_from_str(name));
  const std::string csv = fp8lab::format_code_table_csv(fmt);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << csv;
  }
  return 0;
}

double final_loss_of(const std::string& run_dir) {
  const auto manifest = nlohmann::json::parse(
      slurp((std::filesystem::path(run_dir) / "manifest.json").string()));
  return manifest.at("final_loss").get<double>();
}

bool diverged_of(const std::string& run_dir) {
  const auto manifest = nlohmann::json::parse(
      slurp((std::filesystem::path(run_dir) / "manifest.json").string()));
  return manifest.at("diverged").get<bool>();
}

int cmd_compare(const std::string& a, const std::string& b, double tol) {
  const double la = final_loss_of(a), lb = final_loss_of(b);
  const bool da = diverged_of(a), db = diverged_of(b);
  const double rel = la == 0.0 ? std::fabs(lb - la)
                               : std::fabs(lb - la) / std::fabs(la);
  std::cout << "final_loss_a " << la << (da ? " (diverged)" : "") << "\n"
            << "final_loss_b " << lb << (db ? " (diverged)" : "") << "\n"
            << "rel_diff " << rel << "\n";
  if (da != db) {
    std::cout << "divergence status differs\n";
    return 1;
  }
  if (tol >= 0.0 && rel > tol) {
    std::cout << "rel_diff exceeds tolerance " << tol << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fp8lab: FP8/BF16 emulated training harness"};
  app.require_subcommand(1);

  ConfigCli run_cli;
  CLI::App* run = app.add_subcommand("run", "execute one training run");
  run_cli.attach(run);

  ConfigCli sweep_cli;
  CLI::App* sweep = app.add_subcommand(
      "sweep-optimizer",
      "run fp32 baseline plus all four fp8 moment pairings");
  sweep_cli.attach(sweep);

  fp8lab::AlignmentConfig acfg;
  std::string align_out;
  CLI::App* align =
      app.add_subcommand("alignment", "gate weight alignment experiment");
  align->add_option("--seed", acfg.seed);
  align->add_option("--mu", acfg.mu, "coupled l2 strength");
  align->add_option("--in-dim", acfg.in_dim);
  align->add_option("--hidden", acfg.hidden);
  align->add_option("--samples", acfg.n_samples, "0 = 50x parameter count");
  align->add_option("--max-steps", acfg.max_steps);
  align->add_option("--grad-tol", acfg.grad_tol);
  align->add_option("--lr", acfg.lr);
  align->add_option("--input-scale", acfg.input_scale);
  align->add_option("--teacher-scale", acfg.teacher_scale);
  align->add_option("--noise", acfg.noise);
  align->add_option("--out", align_out, "write the per-channel CSV here");

  std::string dump_format = "e4m3", dump_out;
  CLI::App* dump =
      app.add_subcommand("format-dump", "emit a format's full code table");
  dump->add_option("--format", dump_format, "e4m3|e5m2|bf16|fp16");
  dump->add_option("--out", dump_out, "output file (default stdout)");

  std::string cmp_a, cmp_b;
  double cmp_tol = -1.0;
  CLI::App* cmp = app.add_subcommand("compare", "compare two run directories");
  cmp->add_option("run_a", cmp_a)->required();
  cmp->add_option("run_b", cmp_b)->required();
  cmp->add_option("--tol", cmp_tol, "fail if relative final-loss diff exceeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_cli);
    if (sweep->parsed()) return cmd_sweep(sweep_cli);
    if (align->parsed()) return cmd_alignment(acfg, align_out);
    if (dump->parsed()) return cmd_format_dump(dump_format, dump_out);
    if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
