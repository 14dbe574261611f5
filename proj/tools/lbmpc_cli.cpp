// Experiment CLI.
//
//   lbmpc run     --config cfg.json [--omega W] [overrides]   single-omega study
//   lbmpc sweep   --config cfg.json [overrides]               full omega list
//   lbmpc collect --config cfg.json [--omega W] --out ds.csv  training data
//   lbmpc report  --log traj.csv [--config cfg.json]          recompute metrics
//
// run/sweep write per-run trajectory CSVs, training datasets, plot-ready
// CSVs, and report.json into the output directory. Exit code is nonzero iff
// any run fails to converge (solver divergence or non-finite state).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lbmpc/harness.hpp"

namespace {

struct Overrides {
  std::optional<double> omega;
  std::optional<std::string> controller;
  std::optional<std::string> traj;
  std::optional<double> amplitude;
  std::optional<int> n_train;
  std::optional<int> horizon;
  std::optional<unsigned long long> seed;
  std::optional<std::string> output_dir;
  bool threaded = false;
  bool no_constraints = false;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--omega", ov.omega, "replace the config omega list with a single value");
  cmd->add_option("--controller", ov.controller, "lb_mpc or fb_mpc");
  cmd->add_option("--trajectory", ov.traj, "figure8, sinusoid-x, circle, or hover");
  cmd->add_option("--amplitude", ov.amplitude, "trajectory amplitude, m");
  cmd->add_option("--n-train", ov.n_train, "GP training sample count");
  cmd->add_option("--horizon", ov.horizon, "MPC horizon length");
  cmd->add_option("--seed", ov.seed, "RNG seed");
  cmd->add_option("--output-dir", ov.output_dir, "artifact directory");
  cmd->add_flag("--threaded", ov.threaded, "build plans on a worker thread");
  cmd->add_flag("--no-constraints", ov.no_constraints, "disable the SOC constraints");
}

lbmpc::RunConfig apply_overrides(const std::string& config_path, const Overrides& ov) {
  lbmpc::RunConfig cfg =
      config_path.empty() ? lbmpc::RunConfig{} : lbmpc::load_config(config_path);
  if (ov.omega) cfg.omegas = {*ov.omega};
  if (ov.controller) cfg.controller = *ov.controller;
  if (ov.traj) cfg.traj_kind = *ov.traj;
  if (ov.amplitude) cfg.amplitude = *ov.amplitude;
  if (ov.n_train) cfg.n_train = *ov.n_train;
  if (ov.horizon) cfg.horizon = *ov.horizon;
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (ov.threaded) cfg.threaded_precompute = true;
  if (ov.no_constraints) cfg.constraints_enabled = false;
  cfg.validate();
  return cfg;
}

int execute_study(lbmpc::RunConfig cfg) {
  const lbmpc::ExperimentOutput out = lbmpc::run_experiment(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  for (const auto& [key, log] : out.logs) log.save(cfg.output_dir + "/traj_" + key + ".csv");
  for (const auto& [key, ds] : out.datasets)
    lbmpc::save_dataset(cfg.output_dir + "/train_" + key + ".csv", ds);
  lbmpc::emit_plot_data(out, cfg.output_dir);
  {
    std::ofstream f(cfg.output_dir + "/report.json");
    f << lbmpc::report_to_json(out.report).dump(2) << '\n';
  }
  std::cout << lbmpc::report_to_json(out.report).dump(2) << std::endl;
  bool any_failed = false;
  for (const auto& r : out.report.runs) any_failed |= r.failed;
  return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learning-based MPC experiment harness"};
  app.require_subcommand(1);

  std::string config_path, log_path, out_path;
  Overrides ov;

  CLI::App* run = app.add_subcommand("run", "single-omega study");
  run->add_option("--config", config_path, "JSON run configuration");
  add_override_flags(run, ov);

  CLI::App* sweep = app.add_subcommand("sweep", "study over the full omega list");
  sweep->add_option("--config", config_path, "JSON run configuration");
  add_override_flags(sweep, ov);

  CLI::App* collect = app.add_subcommand("collect", "gather GP training data");
  collect->add_option("--config", config_path, "JSON run configuration");
  collect->add_option("--out", out_path, "dataset CSV destination")->required();
  collect->add_option("--log", log_path, "subsample an existing trajectory CSV");
  add_override_flags(collect, ov);

  CLI::App* report = app.add_subcommand("report", "recompute metrics from a trajectory CSV");
  report->add_option("--log", log_path, "trajectory CSV")->required();
  report->add_option("--config", config_path, "JSON run configuration (for warmup/limits)");
  report->add_option("--omega", ov.omega, "omega label for the report entry");
  report->add_option("--controller", ov.controller, "controller label for the report entry");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      lbmpc::RunConfig cfg = apply_overrides(config_path, ov);
      if (!ov.omega) cfg.omegas = {cfg.omegas.front()};
      return execute_study(cfg);
    }
    if (sweep->parsed()) return execute_study(apply_overrides(config_path, ov));
    if (collect->parsed()) {
      lbmpc::RunConfig cfg = apply_overrides(config_path, ov);
      lbmpc::TrajectoryLog log;
      if (!log_path.empty()) {
        log = lbmpc::TrajectoryLog::load(log_path);
      } else {
        cfg.controller = "fb_mpc";
        cfg.omegas = {cfg.omegas.front()};
        const lbmpc::ExperimentOutput out = lbmpc::run_experiment(cfg);
        log = out.logs.at(lbmpc::run_key("fb_mpc", cfg.omegas.front()));
        if (log.failed) {
          std::cerr << "collect: feedback run failed: " << log.failure << std::endl;
          return 1;
        }
      }
      const lbmpc::GpDataset ds = lbmpc::collect_training_data(log, cfg.n_train, cfg.seed);
      lbmpc::save_dataset(out_path, ds);
      std::cout << "wrote " << ds.size() << " samples to " << out_path << std::endl;
      return 0;
    }
    if (report->parsed()) {
      lbmpc::RunConfig cfg =
          config_path.empty() ? lbmpc::RunConfig{} : lbmpc::load_config(config_path);
      const lbmpc::TrajectoryLog log = lbmpc::TrajectoryLog::load(log_path);
      lbmpc::ExperimentReport rep;
      rep.runs.push_back(lbmpc::metrics_from_log(log, cfg, ov.controller.value_or("unknown"),
                                                 ov.omega.value_or(0.0)));
      std::cout << lbmpc::report_to_json(rep, /*include_timing=*/false).dump(2) << std::endl;
      return rep.runs.front().failed ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
