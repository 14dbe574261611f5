#pragma once
// Two-rate tracking controller: a low-rate plan build (GP linearization,
// constraint compilation, Riccati factorization) feeding a high-rate
// bounded-iteration ADMM solve whose first stage is mapped to a thrust and
// body-rate command.

#include <Eigen/Dense>

#include <memory>
#include <utility>
#include <vector>

#include "lbmpc/conic.hpp"
#include "lbmpc/flat.hpp"
#include "lbmpc/gp.hpp"
#include "lbmpc/sim.hpp"
#include "lbmpc/solver.hpp"

namespace lbmpc {

// Source of the acceleration entries of the measured flat state. kCommand
// feeds back the previous plan's first-stage acceleration (model-consistent;
// acceleration is not an inertial state, so feeding back the disturbed
// measurement re-injects the disturbance into the thrust command). kTruth
// feeds back the simulator acceleration.
enum class AccelFeedback { kCommand, kTruth };

struct ControllerConfig {
  int N = 10;
  TrackingWeights weights;
  bool constraints_enabled = true;
  ConstraintConfig constraints;
  double rho = 5.0;
  double tol_pri = 1e-4;
  double tol_dual = 1e-4;
  int max_iter = 50;
  AccelFeedback accel_feedback = AccelFeedback::kCommand;
  bool learning_enabled = false;  // zero GP stages when false
};

// Position-dominant tracking weights with the stationary Riccati solution as
// terminal cost, so the short horizon keeps infinite-horizon stiffness.
inline TrackingWeights default_tracking_weights(const FlatLti& lti) {
  TrackingWeights w;
  Vector10d qd;
  qd << 100, 100, 100, 10, 10, 10, 1, 1, 1, 1;
  w.Q = qd.asDiagonal();
  w.R = 0.1 * Matrix4d::Identity();
  w.Qf = riccati_fixed_point(lti, w.Q, w.R);
  return w;
}

// Everything the high-rate loop needs from one low-rate build: the solver
// plan plus the per-stage GP linearizations for the command map.
struct ControllerPlan {
  SolverPlan plan;
  std::vector<LinGpStage> lin;  // size N
};

class TrackingController {
 public:
  using PlanPtr = std::shared_ptr<const ControllerPlan>;

  TrackingController(const FlatLti& lti, ControllerConfig cfg)
      : lti_(lti), cfg_(std::move(cfg)) {}

  void set_gp(GpModel gp) { gp_ = std::make_shared<const GpModel>(std::move(gp)); }
  bool has_gp() const { return gp_ != nullptr; }
  const ControllerConfig& config() const { return cfg_; }

  // Pure function of immutable controller state; safe to run on a worker
  // thread while control ticks continue on the previous plan.
  PlanPtr build_plan(double t) const {
    const int N = cfg_.N;
    const QuadCost cost = tracking_cost(ref_, t, lti_.dt, N, cfg_.weights);
    auto out = std::make_shared<ControllerPlan>();
    const std::vector<FlatState> zr = sample_states(ref_, t, lti_.dt, N + 1);
    out->lin.reserve(N);
    for (int k = 0; k < N; ++k) {
      if (cfg_.learning_enabled && gp_)
        out->lin.push_back(linearize(*gp_, zr[k]));
      else
        out->lin.push_back(LinGpStage::zero(zr[k]));
    }
    if (cfg_.constraints_enabled)
      out->plan = precompute(out->lin, zr, cost, lti_, cfg_.constraints, cfg_.rho);
    else
      out->plan = precompute_unconstrained(cost, lti_, cfg_.rho);
    return out;
  }

  void adopt_plan(PlanPtr p) { plan_ = std::move(p); }
  const PlanPtr& current_plan() const { return plan_; }

  void begin_run(const ReferenceTrajectory& ref, const FlatState& z0) {
    ref_ = ref;
    warm_ = false;
    ws_ = AdmmWorkspace{};
    last_accel_cmd_ = accel(z0);
    last_cmd_.c = (accel(z0) + Eigen::Vector3d(0, 0, kGravity)).norm();
    last_cmd_.omega.setZero();
  }

  Command control_tick(double t, const SimState& st, const Eigen::Vector3d& accel_true,
                       TickDiagnostics& diag) {
    if (!plan_) throw std::runtime_error("control_tick: no plan adopted");
    FlatState z0;
    z0.segment<3>(0) = st.p;
    z0.segment<3>(3) = st.v;
    z0.segment<3>(6) =
        cfg_.accel_feedback == AccelFeedback::kTruth ? accel_true : last_accel_cmd_;
    z0(9) = yaw_from_rotation(st.R);

    // Re-center the affine tracking terms on the current window; gains and
    // constraints stay frozen in the adopted plan.
    const AffineCost fresh =
        affine_terms(tracking_cost(ref_, t, lti_.dt, cfg_.N, cfg_.weights));
    const SolveResult res = solve(plan_->plan, z0, ws_, warm_, cfg_.tol_pri, cfg_.tol_dual,
                                  cfg_.max_iter, &fresh);
    diag.iterations = res.iterations;
    diag.r_pri = res.r_pri;
    diag.r_dual = res.r_dual;
    diag.status = static_cast<int>(res.status);

    if (res.status == SolveStatus::kDiverged) {
      warm_ = false;
      return last_cmd_;
    }
    warm_ = true;

    const FlatState& z1 = res.z_pred.front();
    last_accel_cmd_ = accel(z1);
    const LinGpStage* lin = plan_->lin.size() > 1 ? &plan_->lin[1] : &plan_->lin.front();
    if (auto cmd = flat_to_command(z1, res.v0, lin)) last_cmd_ = *cmd;
    return last_cmd_;  // singular map holds the previous command
  }

 private:
  FlatLti lti_;
  ControllerConfig cfg_;
  ReferenceTrajectory ref_;
  std::shared_ptr<const GpModel> gp_;
  PlanPtr plan_;
  AdmmWorkspace ws_;
  bool warm_ = false;
  Eigen::Vector3d last_accel_cmd_ = Eigen::Vector3d::Zero();
  Command last_cmd_;
};

}  // namespace lbmpc
