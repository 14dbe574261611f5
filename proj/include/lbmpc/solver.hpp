#pragma once
// Two-rate ADMM solver for the LQR-structured SOCP built from the compiled
// stage constraints. The low-rate precompute owns everything quadratic:
// penalty-augmented state weights, Riccati gains and cost-to-go, and the
// radii-update factorization. The high-rate solve iterates
//   primal (affine backward pass + rollout + radii solve)
//   -> slack (cone / half-space projections)
//   -> dual ascent
// with gains frozen from the plan, so each iteration is a fixed, small
// amount of dense linear algebra.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lbmpc/conic.hpp"
#include "lbmpc/flat.hpp"

namespace lbmpc {

struct LqrSolution {
  std::vector<GainMatrix> K;    // size N
  std::vector<Matrix10d> P;    // size N+1
  std::vector<Vector4d> d;     // size N
  std::vector<Vector10d> p;    // size N+1
};

// Finite-horizon Riccati recursion with affine terms:
//   K_k = (R + B'P_{k+1}B)^-1 B'P_{k+1}A
//   d_k = (R + B'P_{k+1}B)^-1 (B'p_{k+1} + r_k)
//   P_k = Q_k + K_k'RK_k + (A - BK_k)'P_{k+1}(A - BK_k)
//   p_k = q_k + (A - BK_k)'(p_{k+1} - P_{k+1}Bd_k) + K_k'(Rd_k - r_k)
// with P_N = Q_f, p_N = q_f.
inline LqrSolution lqr_backward(const QuadCost& cost, const FlatLti& lti) {
  const int N = cost.horizon();
  if (N < 1) throw std::invalid_argument("lqr_backward: horizon must be >= 1");
  LqrSolution out;
  out.K.resize(N);
  out.P.resize(N + 1);
  out.d.resize(N);
  out.p.resize(N + 1);
  out.P[N] = cost.Qf;
  out.p[N] = cost.qf;
  for (int k = N - 1; k >= 0; --k) {
    const Matrix4d M = cost.R + lti.B.transpose() * out.P[k + 1] * lti.B;
    Eigen::LLT<Matrix4d> llt(M);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("lqr_backward: R + B'PB singular (ill-conditioned weights)");
    out.K[k] = llt.solve(lti.B.transpose() * out.P[k + 1] * lti.A);
    out.d[k] = llt.solve(lti.B.transpose() * out.p[k + 1] + cost.r[k]);
    const Matrix10d AmBK = lti.A - lti.B * out.K[k];
    out.P[k] = cost.Q[k] + out.K[k].transpose() * cost.R * out.K[k] +
               AmBK.transpose() * out.P[k + 1] * AmBK;
    out.P[k] = 0.5 * (out.P[k] + out.P[k].transpose()).eval();
    out.p[k] = cost.q[k] + AmBK.transpose() * (out.p[k + 1] - out.P[k + 1] * lti.B * out.d[k]) +
               out.K[k].transpose() * (cost.R * out.d[k] - cost.r[k]);
  }
  return out;
}

// Stationary Riccati solution (infinite-horizon cost-to-go); used as the
// default terminal weight so a short horizon keeps long-horizon stiffness.
inline Matrix10d riccati_fixed_point(const FlatLti& lti, const Matrix10d& Q, const Matrix4d& R,
                                     double tol = 1e-11, int max_iter = 100000) {
  Matrix10d P = Q;
  for (int i = 0; i < max_iter; ++i) {
    const Matrix4d M = R + lti.B.transpose() * P * lti.B;
    const GainMatrix K = M.llt().solve(lti.B.transpose() * P * lti.A);
    const Matrix10d AmBK = lti.A - lti.B * K;
    Matrix10d Pn = Q + K.transpose() * R * K + AmBK.transpose() * P * AmBK;
    Pn = 0.5 * (Pn + Pn.transpose()).eval();
    const double delta = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (delta < tol) return P;
  }
  throw std::runtime_error("riccati_fixed_point: no convergence");
}

struct SolverPlan {
  FlatLti lti;
  int N = 0;
  double rho = 5.0;
  bool constrained = false;
  std::vector<StageConstraintSet> stages;  // size N when constrained
  QuadCost cost;                           // tracking cost of the build window
  std::vector<Matrix10d> Qtilde;           // penalty-augmented state weights
  std::vector<GainMatrix> K;               // frozen gains, size N
  std::vector<Matrix10d> P;                // frozen cost-to-go, size N+1
  std::vector<Matrix4d> Minv;              // (R + B'P_{k+1}B)^-1, size N
  // Factor of I + C'C + T'T; C and T are identical across stages.
  Eigen::LLT<Eigen::Matrix<double, 9, 9>> radii_llt;
};

namespace detail {

inline void finish_plan(SolverPlan& plan) {
  QuadCost mod = plan.cost;
  mod.Q = plan.Qtilde;
  const LqrSolution lqr = lqr_backward(mod, plan.lti);
  plan.K = lqr.K;
  plan.P = lqr.P;
  plan.Minv.resize(plan.N);
  for (int k = 0; k < plan.N; ++k) {
    const Matrix4d M = plan.cost.R + plan.lti.B.transpose() * plan.P[k + 1] * plan.lti.B;
    plan.Minv[k] = M.llt().solve(Matrix4d::Identity());
  }
}

}  // namespace detail

// Low-rate plan build: compile stage constraints at the reference window,
// augment the state weights with the penalty curvature
//   Qtilde_k = Q_k + rho (sum_j F_jk'F_jk + S_k'S_k),
// and run the Riccati recursion once under the augmented weights.
inline SolverPlan precompute(const std::vector<LinGpStage>& lin, const std::vector<FlatState>& zr,
                             const QuadCost& cost, const FlatLti& lti,
                             const ConstraintConfig& cfg, double rho) {
  const int N = cost.horizon();
  if (static_cast<int>(lin.size()) != N || static_cast<int>(zr.size()) < N)
    throw std::invalid_argument("precompute: stage count mismatch");
  if (rho < 0.0) throw std::invalid_argument("precompute: rho must be >= 0");
  SolverPlan plan;
  plan.lti = lti;
  plan.N = N;
  plan.rho = rho;
  plan.constrained = true;
  plan.cost = cost;
  plan.stages.resize(N);
  plan.Qtilde.resize(N);
  for (int k = 0; k < N; ++k) {
    plan.stages[k] = build_stage_constraints(lin[k], zr[k], cfg);
    Matrix10d acc = Matrix10d::Zero();
    for (const SocConstraint& c : plan.stages[k].soc) acc += c.F.transpose() * c.F;
    acc += plan.stages[k].S.transpose() * plan.stages[k].S;
    plan.Qtilde[k] = cost.Q[k] + rho * acc;
    plan.Qtilde[k] = 0.5 * (plan.Qtilde[k] + plan.Qtilde[k].transpose()).eval();
  }
  detail::finish_plan(plan);

  Eigen::Matrix<double, 9, 9> W = Eigen::Matrix<double, 9, 9>::Identity();
  W += plan.stages[0].C.transpose() * plan.stages[0].C;
  W += plan.stages[0].T.transpose() * plan.stages[0].T;
  plan.radii_llt.compute(W);
  if (plan.radii_llt.info() != Eigen::Success)
    throw std::runtime_error("precompute: radii system factorization failed");
  return plan;
}

inline SolverPlan precompute_unconstrained(const QuadCost& cost, const FlatLti& lti,
                                           double rho = 5.0) {
  SolverPlan plan;
  plan.lti = lti;
  plan.N = cost.horizon();
  plan.rho = rho;
  plan.constrained = false;
  plan.cost = cost;
  plan.Qtilde = cost.Q;
  detail::finish_plan(plan);
  return plan;
}

// Fresh affine tracking terms for a high-rate solve; the quadratic weights
// (and thus gains) stay frozen in the plan.
struct AffineCost {
  std::vector<Vector10d> q;
  Vector10d qf = Vector10d::Zero();
  std::vector<Vector4d> r;
};

inline AffineCost affine_terms(const QuadCost& c) { return {c.q, c.qf, c.r}; }

struct AdmmWorkspace {
  int N = 0;
  std::vector<FlatState> states;    // z_0..z_N
  std::vector<FlatInput> inputs;    // v_0..v_{N-1}
  std::vector<Vector9d> radii;      // gamma_k
  // Slack variables per stage: cone arguments, radii, and the tilt pair.
  std::vector<std::array<SocVec, 8>> soc_slack;
  std::vector<Vector9d> radius_slack;
  std::vector<double> tilt_lhs_slack;
  std::vector<double> tilt_rhs_slack;
  // Dual variables, one per slack family plus the radii coupling.
  std::vector<std::array<SocVec, 8>> soc_dual;
  std::vector<Vector9d> radius_dual;
  std::vector<Vector5d> coupling_dual;
  std::vector<double> tilt_lhs_dual;
  std::vector<double> tilt_rhs_dual;
  // Backward-pass affine terms (recomputed every iteration).
  std::vector<Vector4d> feedforward;
  std::vector<Vector10d> costtogo_lin;
  std::vector<Vector10d> stage_q;  // scratch for the assembled linear cost
  double r_pri = 0.0, r_dual = 0.0;

  void resize(const SolverPlan& plan) {
    N = plan.N;
    states.assign(N + 1, FlatState::Zero());
    inputs.assign(N, FlatInput::Zero());
    radii.assign(N, Vector9d::Zero());
    soc_slack.assign(N, {});
    soc_dual.assign(N, {});
    if (plan.constrained) {
      for (int k = 0; k < N; ++k) {
        for (int j = 0; j < 8; ++j) {
          const int rows = plan.stages[k].soc[j].rows();
          soc_slack[k][j] = SocVec::Zero(rows);
          soc_dual[k][j] = SocVec::Zero(rows);
        }
      }
    }
    radius_slack.assign(N, Vector9d::Zero());
    tilt_lhs_slack.assign(N, 0.0);
    tilt_rhs_slack.assign(N, 0.0);
    radius_dual.assign(N, Vector9d::Zero());
    coupling_dual.assign(N, Vector5d::Zero());
    tilt_lhs_dual.assign(N, 0.0);
    tilt_rhs_dual.assign(N, 0.0);
    feedforward.assign(N, Vector4d::Zero());
    costtogo_lin.assign(N + 1, Vector10d::Zero());
    stage_q.assign(N, Vector10d::Zero());
    r_pri = r_dual = 0.0;
  }

  // Warm start: shift every stage-indexed quantity by one step, duplicating
  // the last stage.
  void shift() {
    auto shift_vec = [](auto& v) {
      for (std::size_t k = 0; k + 1 < v.size(); ++k) v[k] = v[k + 1];
    };
    shift_vec(states);
    shift_vec(inputs);
    shift_vec(radii);
    shift_vec(soc_slack);
    shift_vec(radius_slack);
    shift_vec(tilt_lhs_slack);
    shift_vec(tilt_rhs_slack);
    shift_vec(soc_dual);
    shift_vec(radius_dual);
    shift_vec(coupling_dual);
    shift_vec(tilt_lhs_dual);
    shift_vec(tilt_rhs_dual);
  }
};

enum class SolveStatus { kConverged, kMaxIters, kDiverged };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kMaxIters: return "max-iters";
    case SolveStatus::kDiverged: return "diverged";
  }
  return "?";
}

struct SolveResult {
  FlatInput v0 = FlatInput::Zero();
  std::vector<FlatState> z_pred;  // z_1..z_N
  int iterations = 0;
  double r_pri = 0.0;
  double r_dual = 0.0;
  SolveStatus status = SolveStatus::kConverged;
};

// Primal update: assemble the stage linear costs from the current slacks and
// duals, run the affine backward pass with frozen gains, roll the dynamics
// forward, then solve the radii stationarity system
//   (I + C'C + T'T) gamma = (tau - lt/rho) + C'(d - mu/rho) + T'(rh - nu/rho).
// Returns false when the rollout leaves the finite range.
inline bool primal_update(const SolverPlan& plan, AdmmWorkspace& ws, const FlatState& z0,
                          const AffineCost* fresh = nullptr) {
  const int N = plan.N;
  const double rho = plan.rho;
  const auto& q = fresh ? fresh->q : plan.cost.q;
  const auto& r = fresh ? fresh->r : plan.cost.r;
  const Vector10d& qf = fresh ? fresh->qf : plan.cost.qf;

  for (int k = 0; k < N; ++k) {
    Vector10d qt = q[k];
    if (plan.constrained) {
      const StageConstraintSet& st = plan.stages[k];
      for (int j = 0; j < 8; ++j) {
        const SocConstraint& c = st.soc[j];
        qt.noalias() +=
            c.F.transpose() * (ws.soc_dual[k][j] + rho * (c.g - ws.soc_slack[k][j]));
      }
      qt.noalias() += st.S.transpose() *
                      (ws.tilt_rhs_dual[k] + rho * (st.w - ws.tilt_rhs_slack[k]));
    }
    ws.stage_q[k] = qt;
  }

  ws.costtogo_lin[N] = qf;
  for (int k = N - 1; k >= 0; --k) {
    ws.feedforward[k] =
        plan.Minv[k] * (plan.lti.B.transpose() * ws.costtogo_lin[k + 1] + r[k]);
    const Matrix10d AmBK = plan.lti.A - plan.lti.B * plan.K[k];
    ws.costtogo_lin[k] =
        ws.stage_q[k] +
        AmBK.transpose() * (ws.costtogo_lin[k + 1] - plan.P[k + 1] * plan.lti.B * ws.feedforward[k]) +
        plan.K[k].transpose() * (plan.cost.R * ws.feedforward[k] - r[k]);
  }

  ws.states[0] = z0;
  for (int k = 0; k < N; ++k) {
    ws.inputs[k] = -plan.K[k] * ws.states[k] - ws.feedforward[k];
    ws.states[k + 1] = plan.lti.A * ws.states[k] + plan.lti.B * ws.inputs[k];
  }
  if (!ws.states[N].allFinite()) return false;

  if (plan.constrained) {
    for (int k = 0; k < N; ++k) {
      const StageConstraintSet& st = plan.stages[k];
      Vector9d rhs = ws.radius_slack[k] - ws.radius_dual[k] / rho;
      rhs.noalias() += st.C.transpose() * (st.d - ws.coupling_dual[k] / rho);
      rhs.noalias() +=
          st.T.transpose() * (ws.tilt_lhs_slack[k] - ws.tilt_lhs_dual[k] / rho);
      ws.radii[k] = plan.radii_llt.solve(rhs);
    }
  }
  return true;
}

// Slack update: project each cone pair and the tilt half-space pair; the
// dual residual is rho times the largest slack change.
inline void slack_update(const SolverPlan& plan, AdmmWorkspace& ws) {
  if (!plan.constrained) {
    ws.r_dual = 0.0;
    return;
  }
  const double rho = plan.rho;
  double max_delta = 0.0;
  for (int k = 0; k < plan.N; ++k) {
    const StageConstraintSet& st = plan.stages[k];
    for (int j = 0; j < 8; ++j) {
      const SocConstraint& c = st.soc[j];
      const double arg_s = ws.radii[k](c.gamma_index) + ws.radius_dual[k](c.gamma_index) / rho;
      const SocVec arg_v = c.F * ws.states[k] + c.g + ws.soc_dual[k][j] / rho;
      auto [t, v] = project_soc(arg_s, arg_v);
      max_delta = std::max(max_delta, std::abs(t - ws.radius_slack[k](c.gamma_index)));
      max_delta = std::max(max_delta, (v - ws.soc_slack[k][j]).cwiseAbs().maxCoeff());
      ws.radius_slack[k](c.gamma_index) = t;
      ws.soc_slack[k][j] = v;
    }
    // Trivial cone: gamma_7 >= 0 carries no vector part.
    const double t7 = std::max(ws.radii[k](6) + ws.radius_dual[k](6) / rho, 0.0);
    max_delta = std::max(max_delta, std::abs(t7 - ws.radius_slack[k](6)));
    ws.radius_slack[k](6) = t7;

    const double a = st.T.dot(ws.radii[k]) + ws.tilt_lhs_dual[k] / rho;
    const double b = st.S.dot(ws.states[k]) + st.w + ws.tilt_rhs_dual[k] / rho;
    auto [pa, pb] = project_halfspace(a, b);
    max_delta = std::max(max_delta, std::abs(pa - ws.tilt_lhs_slack[k]));
    max_delta = std::max(max_delta, std::abs(pb - ws.tilt_rhs_slack[k]));
    ws.tilt_lhs_slack[k] = pa;
    ws.tilt_rhs_slack[k] = pb;
  }
  ws.r_dual = rho * max_delta;
}

// Dual ascent on every consensus family; the primal residual is the largest
// infinity-norm mismatch across families.
inline void dual_update(const SolverPlan& plan, AdmmWorkspace& ws) {
  if (!plan.constrained) {
    ws.r_pri = 0.0;
    return;
  }
  const double rho = plan.rho;
  double r_pri = 0.0;
  for (int k = 0; k < plan.N; ++k) {
    const StageConstraintSet& st = plan.stages[k];
    for (int j = 0; j < 8; ++j) {
      const SocConstraint& c = st.soc[j];
      const SocVec res_v = c.F * ws.states[k] + c.g - ws.soc_slack[k][j];
      ws.soc_dual[k][j] += rho * res_v;
      r_pri = std::max(r_pri, res_v.cwiseAbs().maxCoeff());
    }
    const Vector9d res_r = ws.radii[k] - ws.radius_slack[k];
    ws.radius_dual[k] += rho * res_r;
    r_pri = std::max(r_pri, res_r.cwiseAbs().maxCoeff());

    const Vector5d res_c = st.C * ws.radii[k] - st.d;
    ws.coupling_dual[k] += rho * res_c;
    r_pri = std::max(r_pri, res_c.cwiseAbs().maxCoeff());

    const double res_t = st.T.dot(ws.radii[k]) - ws.tilt_lhs_slack[k];
    ws.tilt_lhs_dual[k] += rho * res_t;
    r_pri = std::max(r_pri, std::abs(res_t));

    const double res_s = st.S.dot(ws.states[k]) + st.w - ws.tilt_rhs_slack[k];
    ws.tilt_rhs_dual[k] += rho * res_s;
    r_pri = std::max(r_pri, std::abs(res_s));
  }
  ws.r_pri = r_pri;
}

// Full solve. warm=true shifts the previous solution by one stage before
// iterating; pass fresh affine costs to re-center the tracking terms without
// rebuilding the plan.
inline SolveResult solve(const SolverPlan& plan, const FlatState& z0, AdmmWorkspace& ws,
                         bool warm, double tol_pri = 1e-4, double tol_dual = 1e-4,
                         int max_iter = 50, const AffineCost* fresh = nullptr) {
  if (plan.N < 1) throw std::invalid_argument("solve: plan has no stages");
  if (ws.N != plan.N) ws.resize(plan);
  if (warm)
    ws.shift();
  else
    ws.resize(plan);

  SolveResult res;
  res.status = SolveStatus::kMaxIters;
  for (int it = 1; it <= max_iter; ++it) {
    if (!primal_update(plan, ws, z0, fresh)) {
      res.status = SolveStatus::kDiverged;
      res.iterations = it;
      break;
    }
    if (!plan.constrained) {
      ws.r_pri = ws.r_dual = 0.0;
      res.status = SolveStatus::kConverged;
      res.iterations = it;
      break;
    }
    slack_update(plan, ws);
    dual_update(plan, ws);
    res.iterations = it;
    if (ws.r_pri < tol_pri && ws.r_dual < tol_dual) {
      res.status = SolveStatus::kConverged;
      break;
    }
  }
  res.v0 = ws.inputs.empty() ? FlatInput::Zero() : ws.inputs[0];
  res.z_pred.assign(ws.states.begin() + 1, ws.states.end());
  res.r_pri = ws.r_pri;
  res.r_dual = ws.r_dual;
  return res;
}

}  // namespace lbmpc
