#pragma once
// Experiment harness: versioned JSON run configuration, Latin-hypercube
// training-data collection from a feedback run, the FB/LB comparison study,
// metrics, and plot-ready CSV output.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbmpc/controller.hpp"
#include "lbmpc/csv.hpp"
#include "lbmpc/flat.hpp"
#include "lbmpc/gp.hpp"
#include "lbmpc/sim.hpp"

namespace lbmpc {

struct RunConfig {
  int schema_version = 1;
  std::string controller = "lb_mpc";  // lb_mpc | fb_mpc
  std::string traj_kind = "figure8";
  double amplitude = 0.5;
  std::vector<double> omegas = {0.5, 1.0, 1.5};
  int horizon = 10;
  Rates rates;
  double warmup_s = 1.0;        // excluded from RMSE
  double periods = 2.0;         // run length after warmup, in trajectory periods
  double hover_duration_s = 5.0;  // run length after warmup for hover
  Vector10d q_diag = (Vector10d() << 100, 100, 100, 10, 10, 10, 1, 1, 1, 1).finished();
  Vector4d r_diag = Vector4d::Constant(0.1);
  std::string terminal = "dare";  // dare: stationary Riccati solution; copy: Q_f = Q
  bool constraints_enabled = true;
  ConstraintConfig constraints;
  int n_train = 10;
  SeKernelParams kernel = default_kernel_params();
  double meas_noise_std = 0.01;
  double rho = 5.0;
  double tol_pri = 1e-4;
  double tol_dual = 1e-4;
  int max_iter = 50;
  Eigen::Vector3d drag_diag = Eigen::Vector3d::Ones();
  bool drag_opposes_velocity = true;
  std::string accel_feedback = "command";  // command | truth
  bool threaded_precompute = false;
  bool force_zero_gp = false;  // run the lb pipeline with zeroed GP stages
  unsigned long long seed = 1234;
  std::string output_dir = "out";

  void validate() const {
    if (schema_version != 1) throw std::invalid_argument("config: unsupported schema_version");
    if (controller != "lb_mpc" && controller != "fb_mpc")
      throw std::invalid_argument("config: controller must be lb_mpc or fb_mpc");
    ref_kind_from_string(traj_kind);
    if (omegas.empty()) throw std::invalid_argument("config: omegas must be non-empty");
    if (horizon < 2) throw std::invalid_argument("config: horizon must be >= 2");
    rates.validate();
    if (constraints_enabled) constraints.validate();
    kernel.validate();
    if (n_train < 1) throw std::invalid_argument("config: n_train must be >= 1");
    if (warmup_s < 0.0 || periods <= 0.0) throw std::invalid_argument("config: bad duration");
    if (accel_feedback != "command" && accel_feedback != "truth")
      throw std::invalid_argument("config: accel_feedback must be command or truth");
  }

  double duration_for(double omega) const {
    if (ref_kind_from_string(traj_kind) == RefKind::kHover || omega <= 0.0)
      return warmup_s + hover_duration_s;
    return warmup_s + periods * (2.0 * M_PI / omega);
  }
};

namespace detail {

inline std::vector<double> to_std(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

template <typename Vec>
Vec from_json_vec(const nlohmann::json& j, const std::string& key, const Vec& fallback) {
  if (!j.contains(key)) return fallback;
  const auto arr = j.at(key).get<std::vector<double>>();
  if (static_cast<int>(arr.size()) != fallback.size())
    throw std::invalid_argument("config: wrong length for " + key);
  Vec out;
  for (int i = 0; i < out.size(); ++i) out(i) = arr[i];
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["schema_version"] = c.schema_version;
  j["controller"] = c.controller;
  j["trajectory"] = {{"kind", c.traj_kind}, {"amplitude", c.amplitude}, {"omegas", c.omegas}};
  j["horizon"] = c.horizon;
  j["rates"] = {{"sim_hz", c.rates.sim_hz},
                {"ctrl_hz", c.rates.ctrl_hz},
                {"precompute_hz", c.rates.precompute_hz}};
  j["duration"] = {{"warmup_s", c.warmup_s},
                   {"periods", c.periods},
                   {"hover_duration_s", c.hover_duration_s}};
  j["weights"] = {{"q_diag", detail::to_std(c.q_diag)},
                  {"r_diag", detail::to_std(c.r_diag)},
                  {"terminal", c.terminal}};
  j["constraints"] = {{"enabled", c.constraints_enabled},
                      {"c_max", c.constraints.c_max},
                      {"theta_max", c.constraints.theta_max},
                      {"p_b", c.constraints.p_b},
                      {"p_c", c.constraints.p_c},
                      {"cone_uses_raw_mean", c.constraints.cone_uses_raw_mean}};
  j["gp"] = {{"n_train", c.n_train},
             {"sigma_eta2", c.kernel.sigma_eta2},
             {"sigma_omega2", c.kernel.sigma_omega2},
             {"length_scales", detail::to_std(c.kernel.length_scales)},
             {"meas_noise_std", c.meas_noise_std}};
  j["admm"] = {{"rho", c.rho},
               {"tol_pri", c.tol_pri},
               {"tol_dual", c.tol_dual},
               {"max_iter", c.max_iter}};
  j["drag"] = {{"diag", detail::to_std(c.drag_diag)},
               {"opposes_velocity", c.drag_opposes_velocity}};
  j["sim"] = {{"accel_feedback", c.accel_feedback},
              {"threaded_precompute", c.threaded_precompute},
              {"force_zero_gp", c.force_zero_gp}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.schema_version = j.value("schema_version", c.schema_version);
  c.controller = j.value("controller", c.controller);
  if (j.contains("trajectory")) {
    const auto& t = j.at("trajectory");
    c.traj_kind = t.value("kind", c.traj_kind);
    c.amplitude = t.value("amplitude", c.amplitude);
    if (t.contains("omegas")) c.omegas = t.at("omegas").get<std::vector<double>>();
  }
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("rates")) {
    const auto& r = j.at("rates");
    c.rates.sim_hz = r.value("sim_hz", c.rates.sim_hz);
    c.rates.ctrl_hz = r.value("ctrl_hz", c.rates.ctrl_hz);
    c.rates.precompute_hz = r.value("precompute_hz", c.rates.precompute_hz);
  }
  if (j.contains("duration")) {
    const auto& d = j.at("duration");
    c.warmup_s = d.value("warmup_s", c.warmup_s);
    c.periods = d.value("periods", c.periods);
    c.hover_duration_s = d.value("hover_duration_s", c.hover_duration_s);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.q_diag = detail::from_json_vec(w, "q_diag", c.q_diag);
    c.r_diag = detail::from_json_vec(w, "r_diag", c.r_diag);
    c.terminal = w.value("terminal", c.terminal);
  }
  if (j.contains("constraints")) {
    const auto& k = j.at("constraints");
    c.constraints_enabled = k.value("enabled", c.constraints_enabled);
    c.constraints.c_max = k.value("c_max", c.constraints.c_max);
    c.constraints.theta_max = k.value("theta_max", c.constraints.theta_max);
    c.constraints.p_b = k.value("p_b", c.constraints.p_b);
    c.constraints.p_c = k.value("p_c", c.constraints.p_c);
    c.constraints.cone_uses_raw_mean =
        k.value("cone_uses_raw_mean", c.constraints.cone_uses_raw_mean);
  }
  if (j.contains("gp")) {
    const auto& g = j.at("gp");
    c.n_train = g.value("n_train", c.n_train);
    c.kernel.sigma_eta2 = g.value("sigma_eta2", c.kernel.sigma_eta2);
    c.kernel.sigma_omega2 = g.value("sigma_omega2", c.kernel.sigma_omega2);
    c.kernel.length_scales = detail::from_json_vec(g, "length_scales", c.kernel.length_scales);
    c.meas_noise_std = g.value("meas_noise_std", c.meas_noise_std);
  }
  if (j.contains("admm")) {
    const auto& a = j.at("admm");
    c.rho = a.value("rho", c.rho);
    c.tol_pri = a.value("tol_pri", c.tol_pri);
    c.tol_dual = a.value("tol_dual", c.tol_dual);
    c.max_iter = a.value("max_iter", c.max_iter);
  }
  if (j.contains("drag")) {
    const auto& d = j.at("drag");
    c.drag_diag = detail::from_json_vec(d, "diag", c.drag_diag);
    c.drag_opposes_velocity = d.value("opposes_velocity", c.drag_opposes_velocity);
  }
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    c.accel_feedback = s.value("accel_feedback", c.accel_feedback);
    c.threaded_precompute = s.value("threaded_precompute", c.threaded_precompute);
    c.force_zero_gp = s.value("force_zero_gp", c.force_zero_gp);
  }
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return config_from_json(j);
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write " + path);
  f << to_json(c).dump(2) << '\n';
}

// Latin hypercube over the time axis: the log is split into n equal strata
// and one tick is drawn uniformly from each.
inline GpDataset collect_training_data(const TrajectoryLog& log, int n,
                                       unsigned long long seed) {
  const int M = static_cast<int>(log.rows.size());
  if (n < 1) throw std::invalid_argument("collect: n must be >= 1");
  if (M < n) throw std::invalid_argument("collect: log shorter than requested sample count");
  std::mt19937_64 rng(seed);
  GpDataset ds;
  ds.Z.resize(n, kStateDim);
  ds.Y.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const int lo = static_cast<int>(static_cast<long long>(i) * M / n);
    const int hi = static_cast<int>(static_cast<long long>(i + 1) * M / n);
    std::uniform_int_distribution<int> pick(lo, hi - 1);
    const LogRow& row = log.rows[pick(rng)];
    ds.Z.row(i) = row.z.transpose();
    ds.Y.row(i) = row.dhat.transpose();
  }
  return ds;
}

struct RunResult {
  std::string controller;
  double omega = 0.0;
  double rmse = 0.0;
  double max_err = 0.0;
  double mean_iters = 0.0;
  int max_iters = 0;
  double converged_frac = 0.0;
  double ball_ok_frac = 0.0;  // post-hoc ||c|| <= c_max frequency
  double tilt_ok_frac = 0.0;  // post-hoc tilt <= theta_max frequency
  double mean_us = 0.0, p50_us = 0.0, p99_us = 0.0;  // high-rate solve timing
  double pre_mean_us = 0.0, pre_max_us = 0.0;        // plan-build timing
  bool failed = false;
  std::string failure;
};

struct Comparison {
  double omega = 0.0;
  double fb_rmse = 0.0;
  double lb_rmse = 0.0;
  double reduction_pct = 0.0;
};

struct ExperimentReport {
  int schema_version = 1;
  std::vector<RunResult> runs;
  std::vector<Comparison> comparisons;
};

inline double rmse_position(const TrajectoryLog& log, double warmup_s) {
  double acc = 0.0;
  int n = 0;
  for (const LogRow& r : log.rows) {
    if (r.t < warmup_s) continue;
    acc += (position(r.z) - position(r.zref)).squaredNorm();
    ++n;
  }
  return n ? std::sqrt(acc / n) : 0.0;
}

inline double max_position_error(const TrajectoryLog& log, double warmup_s) {
  double m = 0.0;
  for (const LogRow& r : log.rows)
    if (r.t >= warmup_s) m = std::max(m, (position(r.z) - position(r.zref)).norm());
  return m;
}

// Per-run metrics recomputed from a log (used by the report verb and the
// in-process runner; both paths share this function).
inline RunResult metrics_from_log(const TrajectoryLog& log, const RunConfig& cfg,
                                  const std::string& controller, double omega) {
  RunResult r;
  r.controller = controller;
  r.omega = omega;
  r.rmse = rmse_position(log, cfg.warmup_s);
  r.max_err = max_position_error(log, cfg.warmup_s);
  long long iter_sum = 0;
  int conv = 0, ball_ok = 0, tilt_ok = 0;
  const double tilt_lim = std::cos(cfg.constraints.theta_max);
  for (const LogRow& row : log.rows) {
    iter_sum += row.diag.iterations;
    r.max_iters = std::max(r.max_iters, row.diag.iterations);
    if (row.diag.status == 0) ++conv;
    if (row.cmd.c <= cfg.constraints.c_max + 1e-9) ++ball_ok;
    if (row.cmd_zb.z() >= tilt_lim - 1e-9) ++tilt_ok;
  }
  const double n = std::max<std::size_t>(log.rows.size(), 1);
  r.mean_iters = iter_sum / n;
  r.converged_frac = conv / n;
  r.ball_ok_frac = ball_ok / n;
  r.tilt_ok_frac = tilt_ok / n;
  r.failed = log.failed;
  r.failure = log.failure;
  return r;
}

namespace detail {

// Times the solve and plan-build calls without touching the trajectory log,
// keeping logged artifacts deterministic.
struct TimedController {
  TrackingController& inner;
  std::vector<double>* solve_us;
  std::vector<double>* pre_us;

  TrackingController::PlanPtr build_plan(double t) const {
    const auto t0 = std::chrono::steady_clock::now();
    auto p = inner.build_plan(t);
    const auto t1 = std::chrono::steady_clock::now();
    pre_us->push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    return p;
  }
  void adopt_plan(TrackingController::PlanPtr p) { inner.adopt_plan(std::move(p)); }
  void begin_run(const ReferenceTrajectory& ref, const FlatState& z0) { inner.begin_run(ref, z0); }
  Command control_tick(double t, const SimState& st, const Eigen::Vector3d& a,
                       TickDiagnostics& diag) {
    const auto t0 = std::chrono::steady_clock::now();
    Command c = inner.control_tick(t, st, a, diag);
    const auto t1 = std::chrono::steady_clock::now();
    solve_us->push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    return c;
  }
};

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double idx = p * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (idx - lo) * (v[hi] - v[lo]);
}

inline ControllerConfig controller_config(const RunConfig& cfg, const FlatLti& lti,
                                          bool learning) {
  ControllerConfig cc;
  cc.N = cfg.horizon;
  cc.weights.Q = cfg.q_diag.asDiagonal();
  cc.weights.R = cfg.r_diag.asDiagonal();
  if (cfg.terminal == "dare")
    cc.weights.Qf = riccati_fixed_point(lti, cc.weights.Q, cc.weights.R);
  else if (cfg.terminal == "copy")
    cc.weights.Qf = cc.weights.Q;
  else
    throw std::invalid_argument("config: terminal must be dare or copy");
  cc.constraints_enabled = cfg.constraints_enabled;
  cc.constraints = cfg.constraints;
  cc.rho = cfg.rho;
  cc.tol_pri = cfg.tol_pri;
  cc.tol_dual = cfg.tol_dual;
  cc.max_iter = cfg.max_iter;
  cc.accel_feedback =
      cfg.accel_feedback == "truth" ? AccelFeedback::kTruth : AccelFeedback::kCommand;
  cc.learning_enabled = learning;
  return cc;
}

}  // namespace detail

struct ExperimentOutput {
  ExperimentReport report;
  // Keyed "<controller>_w<omega>"; the fb run of an lb experiment is kept.
  std::map<std::string, TrajectoryLog> logs;
  std::map<std::string, GpDataset> datasets;  // training data per omega
};

inline std::string run_key(const std::string& controller, double omega) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_w%g", controller.c_str(), omega);
  return buf;
}

// Executes the configured study. fb_mpc is the identical pipeline with the
// GP stages zeroed; lb_mpc first runs fb_mpc, subsamples its disturbance log
// for training, fits the GP, and reruns with learning enabled.
inline ExperimentOutput run_experiment(const RunConfig& cfg) {
  cfg.validate();
  ExperimentOutput out;
  const FlatLti lti = discretize_flat(1.0 / cfg.rates.ctrl_hz);
  const bool want_lb = cfg.controller == "lb_mpc";

  DragModel drag;
  drag.diag = cfg.drag_diag;
  drag.opposes_velocity = cfg.drag_opposes_velocity;

  for (double omega : cfg.omegas) {
    ReferenceTrajectory ref;
    ref.kind = ref_kind_from_string(cfg.traj_kind);
    ref.amplitude = cfg.amplitude;
    ref.omega = omega;
    const double duration = cfg.duration_for(omega);

    auto execute = [&](bool learning, const GpModel* gp, const std::string& name) {
      TrackingController ctl(lti, detail::controller_config(cfg, lti, learning));
      if (gp) ctl.set_gp(*gp);
      RunResult rr;
      std::vector<double> solve_us, pre_us;
      detail::TimedController timed{ctl, &solve_us, &pre_us};
      const TrajectoryLog log = run_closed_loop(timed, ref, drag, cfg.rates, duration,
                                                cfg.meas_noise_std, cfg.seed,
                                                cfg.threaded_precompute);
      rr = metrics_from_log(log, cfg, name, omega);
      rr.mean_us = solve_us.empty()
                       ? 0.0
                       : std::accumulate(solve_us.begin(), solve_us.end(), 0.0) / solve_us.size();
      rr.p50_us = detail::percentile(solve_us, 0.50);
      rr.p99_us = detail::percentile(solve_us, 0.99);
      rr.pre_mean_us = pre_us.empty()
                           ? 0.0
                           : std::accumulate(pre_us.begin(), pre_us.end(), 0.0) / pre_us.size();
      rr.pre_max_us = pre_us.empty() ? 0.0 : *std::max_element(pre_us.begin(), pre_us.end());
      out.logs[run_key(name, omega)] = log;
      out.report.runs.push_back(rr);
      return rr;
    };

    const RunResult fb = execute(false, nullptr, "fb_mpc");
    if (want_lb) {
      const TrajectoryLog& fb_log = out.logs[run_key("fb_mpc", omega)];
      RunResult lb;
      if (fb_log.rows.empty()) {
        lb.controller = "lb_mpc";
        lb.omega = omega;
        lb.failed = true;
        lb.failure = "no feedback log to train from";
        out.report.runs.push_back(lb);
      } else {
        const GpDataset ds = collect_training_data(fb_log, cfg.n_train, cfg.seed);
        out.datasets[run_key("lb_mpc", omega)] = ds;
        const GpModel gp = fit(ds, cfg.kernel);
        lb = execute(!cfg.force_zero_gp, &gp, "lb_mpc");
      }
      if (!fb.failed && !lb.failed) {
        Comparison cmp;
        cmp.omega = omega;
        cmp.fb_rmse = fb.rmse;
        cmp.lb_rmse = lb.rmse;
        cmp.reduction_pct = fb.rmse > 0.0 ? 100.0 * (1.0 - lb.rmse / fb.rmse) : 0.0;
        out.report.comparisons.push_back(cmp);
      }
    }
  }
  return out;
}

inline nlohmann::json report_to_json(const ExperimentReport& rep, bool include_timing = true) {
  nlohmann::json j;
  j["schema_version"] = rep.schema_version;
  j["runs"] = nlohmann::json::array();
  for (const RunResult& r : rep.runs) {
    nlohmann::json jr;
    jr["controller"] = r.controller;
    jr["omega"] = r.omega;
    jr["rmse_m"] = r.rmse;
    jr["max_err_m"] = r.max_err;
    jr["mean_iters"] = r.mean_iters;
    jr["max_iters"] = r.max_iters;
    jr["converged_frac"] = r.converged_frac;
    jr["ball_ok_frac"] = r.ball_ok_frac;
    jr["tilt_ok_frac"] = r.tilt_ok_frac;
    jr["failed"] = r.failed;
    if (!r.failure.empty()) jr["failure"] = r.failure;
    if (include_timing) {
      jr["timing"] = {{"mean_us", r.mean_us},   {"p50_us", r.p50_us},
                      {"p99_us", r.p99_us},     {"pre_mean_us", r.pre_mean_us},
                      {"pre_max_us", r.pre_max_us}};
    }
    j["runs"].push_back(jr);
  }
  j["comparisons"] = nlohmann::json::array();
  for (const Comparison& c : rep.comparisons) {
    j["comparisons"].push_back({{"omega", c.omega},
                                {"fb_rmse_m", c.fb_rmse},
                                {"lb_rmse_m", c.lb_rmse},
                                {"reduction_pct", c.reduction_pct}});
  }
  return j;
}

// Plot-ready bundle: one x/z path file per run plus an RMSE-vs-omega summary.
inline void emit_plot_data(const ExperimentOutput& out, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [key, log] : out.logs) {
    std::vector<std::vector<double>> rows;
    rows.reserve(log.rows.size());
    for (const LogRow& r : log.rows)
      rows.push_back({r.t, r.z(0), r.z(2), r.zref(0), r.zref(2)});
    csv::write_file(dir + "/path_" + key + ".csv", {"t", "x", "z", "ref_x", "ref_z"}, rows);
  }
  std::vector<std::vector<double>> summary;
  for (const Comparison& c : out.report.comparisons)
    summary.push_back({c.omega, c.fb_rmse, c.lb_rmse, c.reduction_pct});
  csv::write_file(dir + "/rmse_summary.csv", {"omega", "fb_rmse_m", "lb_rmse_m", "reduction_pct"},
                  summary);
}

}  // namespace lbmpc
