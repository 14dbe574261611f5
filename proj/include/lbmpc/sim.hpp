#pragma once
// Nonlinear rigid-body multirotor simulation with rotor drag, the
// flat-output-to-command map, disturbance measurement for GP training, and
// the deterministic two-rate closed-loop runner.
//
// Dynamics on (p, v, R):
//   p' = v
//   v' = -g z_W + c z_B + f_d,   f_d = -R D R' v   (drag opposes velocity)
//   R' = R [omega]x
// integrated with RK4 at a fixed step and re-orthonormalized (polar
// projection) afterwards.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbmpc/csv.hpp"
#include "lbmpc/flat.hpp"
#include "lbmpc/gp.hpp"

namespace lbmpc {

struct SimState {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // body-to-world
  double t = 0.0;
};

struct Command {
  double c = 0.0;  // mass-normalized collective thrust, m/s^2, >= 0
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();  // body rates, rad/s
};

struct DragModel {
  Eigen::Vector3d diag = Eigen::Vector3d::Zero();  // rotor-drag coefficients, 1/s
  // Flipping this aligns the drag force with the velocity instead
  // (anti-damping), kept only as a comparison mode.
  bool opposes_velocity = true;

  Eigen::Vector3d force(const Eigen::Matrix3d& R, const Eigen::Vector3d& v) const {
    const Eigen::Vector3d f = R * (diag.asDiagonal() * (R.transpose() * v));
    return opposes_velocity ? Eigen::Vector3d(-f) : f;
  }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d S;
  S << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return S;
}

// Nearest rotation matrix in Frobenius norm (polar projection).
inline Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    out = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return out;
}

// World-frame acceleration at the current state under a held command.
inline Eigen::Vector3d accel_world(const SimState& s, const Command& cmd, const DragModel& drag) {
  return Eigen::Vector3d(0, 0, -kGravity) + cmd.c * s.R.col(2) + drag.force(s.R, s.v);
}

inline SimState step(const SimState& s, const Command& cmd, const DragModel& drag, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  struct Deriv {
    Eigen::Vector3d dp, dv;
    Eigen::Matrix3d dR;
  };
  const Eigen::Matrix3d Omega = skew(cmd.omega);
  auto f = [&](const Eigen::Vector3d& /*p*/, const Eigen::Vector3d& v, const Eigen::Matrix3d& R) {
    Deriv d;
    d.dp = v;
    d.dv = Eigen::Vector3d(0, 0, -kGravity) + cmd.c * R.col(2) + drag.force(R, v);
    d.dR = R * Omega;
    return d;
  };
  const Deriv k1 = f(s.p, s.v, s.R);
  const Deriv k2 = f(s.p + 0.5 * dt * k1.dp, s.v + 0.5 * dt * k1.dv, s.R + 0.5 * dt * k1.dR);
  const Deriv k3 = f(s.p + 0.5 * dt * k2.dp, s.v + 0.5 * dt * k2.dv, s.R + 0.5 * dt * k2.dR);
  const Deriv k4 = f(s.p + dt * k3.dp, s.v + dt * k3.dv, s.R + dt * k3.dR);
  SimState n;
  n.p = s.p + dt / 6.0 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
  n.v = s.v + dt / 6.0 * (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv);
  n.R = orthonormalize(s.R + dt / 6.0 * (k1.dR + 2 * k2.dR + 2 * k3.dR + k4.dR));
  n.t = s.t + dt;
  return n;
}

// Minimal rotation taking z_W to the thrust direction, composed with a yaw
// rotation about z_W applied first (tilt-yaw decomposition).
inline Eigen::Matrix3d attitude_from_thrust_yaw(const Eigen::Vector3d& thrust, double psi) {
  const double n = thrust.norm();
  if (n < 1e-9) throw std::invalid_argument("attitude: thrust vector too small");
  const Eigen::Vector3d zb = thrust / n;
  const double denom = 1.0 + zb.z();
  if (denom < 1e-9) throw std::invalid_argument("attitude: inverted thrust direction");
  Eigen::Matrix3d tilt;
  tilt << 1.0 - zb.x() * zb.x() / denom, -zb.x() * zb.y() / denom, zb.x(),
      -zb.x() * zb.y() / denom, 1.0 - zb.y() * zb.y() / denom, zb.y(),
      -zb.x(), -zb.y(), zb.z();
  Eigen::Matrix3d yaw_rot;
  yaw_rot << std::cos(psi), -std::sin(psi), 0, std::sin(psi), std::cos(psi), 0, 0, 0, 1;
  return tilt * yaw_rot;
}

inline double yaw_from_rotation(const Eigen::Matrix3d& R) { return std::atan2(R(1, 0), R(0, 0)); }

// Map the first optimized stage to a thrust/body-rate command. The thrust
// vector is c = a* + g z_W - mu(z*) with mu the (optional) learned
// disturbance mean; body rates follow from the thrust-direction derivative
// under the tilt-yaw attitude convention. Returns nullopt near the free-fall
// or inverted-thrust singularities so the caller can hold the last command.
inline std::optional<Command> flat_to_command(const FlatState& zstar, const FlatInput& vstar,
                                              const LinGpStage* lin = nullptr) {
  const Eigen::Vector3d mu = lin ? lin->mean_at(zstar) : Eigen::Vector3d::Zero();
  const Eigen::Vector3d cvec = accel(zstar) + Eigen::Vector3d(0, 0, kGravity) - mu;
  const double c = cvec.norm();
  if (c < 1e-6) return std::nullopt;
  const Eigen::Vector3d zb = cvec / c;
  const double denom = 1.0 + zb.z();
  if (denom < 1e-6) return std::nullopt;

  // d/dt of the thrust vector through the flat-state derivative
  // zdot = [v, a, j, psi_dot].
  Vector10d zdot;
  zdot.segment<3>(0) = velocity(zstar);
  zdot.segment<3>(3) = accel(zstar);
  zdot.segment<3>(6) = jerk(vstar);
  zdot(9) = yaw_rate(vstar);
  Eigen::Vector3d cdot = jerk(vstar);
  if (lin) {
    for (int ax = 0; ax < 3; ++ax) cdot(ax) -= lin->mu_grad(ax).dot(zdot);
  }
  const Eigen::Vector3d zb_dot = (cdot - zb * zb.dot(cdot)) / c;

  const double psi = yaw(zstar), cp = std::cos(psi), sp = std::sin(psi);
  const double common = zb_dot.z() / denom;
  Command cmd;
  cmd.c = c;
  cmd.omega.x() = zb_dot.x() * sp - zb_dot.y() * cp - (zb.x() * sp - zb.y() * cp) * common;
  cmd.omega.y() = zb_dot.x() * cp + zb_dot.y() * sp - (zb.x() * cp + zb.y() * sp) * common;
  cmd.omega.z() = (zb.y() * zb_dot.x() - zb.x() * zb_dot.y()) / denom + yaw_rate(vstar);
  return cmd;
}

struct DisturbanceSample {
  FlatState z = FlatState::Zero();
  Eigen::Vector3d dhat = Eigen::Vector3d::Zero();
  double noise_std = 0.0;
};

// Rearranged translational dynamics: dhat = a + g z_W - c z_B + eta equals
// the drag force exactly when eta = 0.
inline DisturbanceSample measure_disturbance(const SimState& s, const Command& cmd,
                                             const Eigen::Vector3d& accel_true, double noise_std,
                                             std::mt19937_64& rng) {
  DisturbanceSample out;
  out.noise_std = noise_std;
  out.dhat = accel_true + Eigen::Vector3d(0, 0, kGravity) - cmd.c * s.R.col(2);
  if (noise_std > 0.0) {
    std::normal_distribution<double> n(0.0, noise_std);
    for (int i = 0; i < 3; ++i) out.dhat(i) += n(rng);
  }
  out.z.segment<3>(0) = s.p;
  out.z.segment<3>(3) = s.v;
  out.z.segment<3>(6) = accel_true;
  out.z(9) = yaw_from_rotation(s.R);
  return out;
}

struct Rates {
  int sim_hz = 1000;
  int ctrl_hz = 100;
  int precompute_hz = 10;

  void validate() const {
    if (sim_hz <= 0 || ctrl_hz <= 0 || precompute_hz <= 0)
      throw std::invalid_argument("rates: all rates must be positive");
    if (sim_hz % ctrl_hz != 0 || ctrl_hz % precompute_hz != 0)
      throw std::invalid_argument("rates: sim_hz must divide by ctrl_hz, ctrl_hz by precompute_hz");
  }
};

struct TickDiagnostics {
  int iterations = 0;
  double r_pri = 0.0;
  double r_dual = 0.0;
  int status = 0;  // SolveStatus as int: 0 converged, 1 max-iters, 2 diverged
};

struct LogRow {
  double t = 0.0;
  FlatState z = FlatState::Zero();  // truth; acceleration under the held command
  Command cmd;
  Eigen::Vector3d cmd_zb = Eigen::Vector3d::UnitZ();  // commanded thrust direction
  FlatState zref = FlatState::Zero();
  Eigen::Vector3d dhat = Eigen::Vector3d::Zero();
  TickDiagnostics diag;
};

struct TrajectoryLog {
  std::vector<LogRow> rows;
  bool failed = false;
  std::string failure;

  static const std::vector<std::string>& csv_header() {
    static const std::vector<std::string> h = {
        "t",       "px",      "py",      "pz",      "vx",       "vy",     "vz",
        "ax",      "ay",      "az",      "psi",     "cmd_c",    "cmd_zbx", "cmd_zby",
        "cmd_zbz", "cmd_wx",  "cmd_wy",  "cmd_wz",  "ref_px",   "ref_py", "ref_pz",
        "ref_vx",  "ref_vy",  "ref_vz",  "ref_ax",  "ref_ay",   "ref_az", "ref_psi",
        "dhat_x",  "dhat_y",  "dhat_z",  "iters",   "r_pri",    "r_dual", "status"};
    return h;
  }

  std::vector<std::vector<double>> to_csv_rows() const {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const LogRow& r : rows) {
      std::vector<double> row;
      row.reserve(35);
      row.push_back(r.t);
      for (int i = 0; i < kStateDim; ++i) row.push_back(r.z(i));
      row.push_back(r.cmd.c);
      for (int i = 0; i < 3; ++i) row.push_back(r.cmd_zb(i));
      for (int i = 0; i < 3; ++i) row.push_back(r.cmd.omega(i));
      for (int i = 0; i < 9; ++i) row.push_back(r.zref(i));  // p, v, a reference
      row.push_back(r.zref(9));
      for (int i = 0; i < 3; ++i) row.push_back(r.dhat(i));
      row.push_back(static_cast<double>(r.diag.iterations));
      row.push_back(r.diag.r_pri);
      row.push_back(r.diag.r_dual);
      row.push_back(static_cast<double>(r.diag.status));
      out.push_back(std::move(row));
    }
    return out;
  }

  void save(const std::string& path) const { csv::write_file(path, csv_header(), to_csv_rows()); }

  std::string to_csv_string() const { return csv::to_string(csv_header(), to_csv_rows()); }

  static TrajectoryLog load(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    if (t.header != csv_header()) throw std::runtime_error("trajectory log: unexpected header");
    TrajectoryLog log;
    log.rows.reserve(t.rows.size());
    for (const auto& row : t.rows) {
      LogRow r;
      int i = 0;
      r.t = row[i++];
      for (int j = 0; j < kStateDim; ++j) r.z(j) = row[i++];
      r.cmd.c = row[i++];
      for (int j = 0; j < 3; ++j) r.cmd_zb(j) = row[i++];
      for (int j = 0; j < 3; ++j) r.cmd.omega(j) = row[i++];
      for (int j = 0; j < kStateDim; ++j) r.zref(j) = row[i++];
      for (int j = 0; j < 3; ++j) r.dhat(j) = row[i++];
      r.diag.iterations = static_cast<int>(row[i++]);
      r.diag.r_pri = row[i++];
      r.diag.r_dual = row[i++];
      r.diag.status = static_cast<int>(row[i++]);
      log.rows.push_back(r);
    }
    return log;
  }
};

// Deterministic fixed-step closed loop. Controller contract:
//   PlanPtr build_plan(double t) const   pure plan build at a window start
//   void adopt_plan(PlanPtr)             publish a built plan
//   void begin_run(ref, z0)              reset warm state before a run
//   Command control_tick(double t, const SimState&, const Eigen::Vector3d&
//                        accel_true, TickDiagnostics&)
// In threaded mode plan builds run on a worker and are adopted one
// precompute interval later, at tick boundaries only, so logs stay
// deterministic while the plan handoff crosses threads.
template <class Controller>
TrajectoryLog run_closed_loop(Controller& ctl, const ReferenceTrajectory& ref,
                              const DragModel& drag, const Rates& rates, double duration,
                              double meas_noise_std, unsigned long long seed,
                              bool threaded_precompute = false) {
  rates.validate();
  const double dt_sim = 1.0 / rates.sim_hz;
  const double dt_ctrl = 1.0 / rates.ctrl_hz;
  const int steps_per_ctrl = rates.sim_hz / rates.ctrl_hz;
  const int ticks_per_pre = rates.ctrl_hz / rates.precompute_hz;
  const int n_ticks = static_cast<int>(std::llround(duration * rates.ctrl_hz));

  std::mt19937_64 rng(seed);
  const auto [z_init, u_init] = ref.eval(0.0);
  SimState st;
  st.p = position(z_init);
  st.v = velocity(z_init);
  st.R = attitude_from_thrust_yaw(accel(z_init) + Eigen::Vector3d(0, 0, kGravity), yaw(z_init));
  Command cmd;
  cmd.c = (accel(z_init) + Eigen::Vector3d(0, 0, kGravity)).norm();

  ctl.begin_run(ref, z_init);
  using PlanPtr = decltype(ctl.build_plan(0.0));
  std::future<PlanPtr> pending;

  TrajectoryLog log;
  log.rows.reserve(n_ticks);
  for (int i = 0; i < n_ticks; ++i) {
    const double t = i * dt_ctrl;
    if (i % ticks_per_pre == 0) {
      if (!threaded_precompute) {
        ctl.adopt_plan(ctl.build_plan(t));
      } else {
        if (pending.valid())
          ctl.adopt_plan(pending.get());
        else
          ctl.adopt_plan(ctl.build_plan(t));
        pending = std::async(std::launch::async, [&ctl, t] { return ctl.build_plan(t); });
      }
    }

    const Eigen::Vector3d a_true = accel_world(st, cmd, drag);
    const DisturbanceSample samp = measure_disturbance(st, cmd, a_true, meas_noise_std, rng);

    LogRow row;
    row.t = t;
    row.z = samp.z;
    row.zref = ref.eval(t).first;
    row.dhat = samp.dhat;

    cmd = ctl.control_tick(t, st, a_true, row.diag);
    row.cmd = cmd;
    row.cmd_zb = st.R.col(2);  // thrust applies along the current body z-axis
    log.rows.push_back(row);

    if (row.diag.status == 2) {
      log.failed = true;
      log.failure = "solver diverged at t=" + std::to_string(t);
      break;
    }
    for (int s = 0; s < steps_per_ctrl; ++s) st = step(st, cmd, drag, dt_sim);
    if (!st.p.allFinite() || !st.v.allFinite() || !st.R.allFinite()) {
      log.failed = true;
      log.failure = "non-finite simulator state at t=" + std::to_string(t);
      break;
    }
  }
  if (pending.valid()) pending.get();
  return log;
}

}  // namespace lbmpc
