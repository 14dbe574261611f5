#include "lbmpc/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lbmpc/conic.hpp"
#include "lbmpc/flat.hpp"
#include "lbmpc/gp.hpp"
#include "lbmpc/controller.hpp"
#include "oracles/socp_ipm.hpp"

namespace lbmpc {
namespace {

std::mt19937_64 g_rng(7);

const FlatLti& lti01() {
  static const FlatLti lti = discretize_flat(0.1);
  return lti;
}

const TrackingWeights& weights() {
  static const TrackingWeights w = default_tracking_weights(lti01());
  return w;
}

Matrix10d random_spd10() {
  std::normal_distribution<double> n;
  Matrix10d V;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) V(i, j) = n(g_rng);
  return V.transpose() * V + Matrix10d::Identity();
}

QuadCost random_cost(int N) {
  std::normal_distribution<double> n;
  QuadCost c;
  c.R = 0.1 * Matrix4d::Identity();
  c.Qf = random_spd10();
  c.Q.resize(N);
  c.q.resize(N);
  c.r.resize(N);
  for (int k = 0; k < N; ++k) {
    c.Q[k] = random_spd10();
    for (int i = 0; i < 10; ++i) c.q[k](i) = n(g_rng);
    for (int i = 0; i < 4; ++i) c.r[k](i) = n(g_rng);
  }
  for (int i = 0; i < 10; ++i) c.qf(i) = n(g_rng);
  return c;
}

GpModel trajectory_trained_gp(const ReferenceTrajectory& ref, std::mt19937_64& rng,
                              double coeff = 0.9) {
  GpDataset ds;
  ds.Z.resize(12, kStateDim);
  ds.Y.resize(12, 3);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double period = 2.0 * M_PI / ref.omega;
  for (int i = 0; i < 12; ++i) {
    const FlatState z = ref.eval(period * i / 12.0).first;
    ds.Z.row(i) = z.transpose();
    ds.Y.row(i) = (-coeff * velocity(z)).transpose();
    for (int a = 0; a < 3; ++a) ds.Y(i, a) += noise(rng);
  }
  return fit(ds, default_kernel_params());
}

SolverPlan constrained_plan(const ReferenceTrajectory& ref, double t0, int N,
                            const ConstraintConfig& cfg, const GpModel& m, double rho = 5.0) {
  const std::vector<FlatState> zr = sample_states(ref, t0, 0.1, N + 1);
  std::vector<LinGpStage> lin;
  lin.reserve(N);
  for (int k = 0; k < N; ++k) lin.push_back(linearize(m, zr[k]));
  return precompute(lin, zr, tracking_cost(ref, t0, 0.1, N, weights()), lti01(), cfg, rho);
}

TEST(LqrBackward, MatchesHandDynamicProgrammingTwoStage) {
  const FlatLti& lti = lti01();
  const QuadCost c = random_cost(2);
  const LqrSolution got = lqr_backward(c, lti);

  const Matrix10d P2 = c.Qf;
  const Vector10d p2 = c.qf;
  const Matrix4d M1inv = (c.R + lti.B.transpose() * P2 * lti.B).inverse();
  const GainMatrix K1 = M1inv * lti.B.transpose() * P2 * lti.A;
  const Vector4d d1 = M1inv * (lti.B.transpose() * p2 + c.r[1]);
  const Matrix10d Ac1 = lti.A - lti.B * K1;
  const Matrix10d P1 = c.Q[1] + K1.transpose() * c.R * K1 + Ac1.transpose() * P2 * Ac1;
  const Vector10d p1 = c.q[1] + Ac1.transpose() * (p2 - P2 * lti.B * d1) +
                       K1.transpose() * (c.R * d1 - c.r[1]);
  const Matrix4d M0inv = (c.R + lti.B.transpose() * P1 * lti.B).inverse();
  const GainMatrix K0 = M0inv * lti.B.transpose() * P1 * lti.A;
  const Vector4d d0 = M0inv * (lti.B.transpose() * p1 + c.r[0]);
  const Matrix10d Ac0 = lti.A - lti.B * K0;
  const Matrix10d P0 = c.Q[0] + K0.transpose() * c.R * K0 + Ac0.transpose() * P1 * Ac0;

  EXPECT_LT((got.K[1] - K1).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.K[0] - K0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.P[1] - P1).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.P[0] - P0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.d[1] - d1).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.d[0] - d0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.p[1] - p1).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LqrBackward, EmptyHorizonRejected) {
  EXPECT_THROW(lqr_backward(QuadCost{}, lti01()), std::invalid_argument);
}

TEST(Riccati, LongFiniteHorizonMatchesFixedPoint) {
  const FlatLti& lti = lti01();
  const TrackingWeights& w = weights();
  QuadCost c;
  const int N = 800;
  c.Q.assign(N, w.Q);
  c.Qf = w.Q;
  c.R = w.R;
  c.q.assign(N, Vector10d::Zero());
  c.r.assign(N, Vector4d::Zero());
  const LqrSolution lqr = lqr_backward(c, lti);
  const Matrix10d Pinf = riccati_fixed_point(lti, w.Q, w.R);
  EXPECT_LT((lqr.P[0] - Pinf).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Riccati, FixedPointSatisfiesRecursion) {
  const FlatLti& lti = lti01();
  const TrackingWeights& w = weights();
  const Matrix10d P = riccati_fixed_point(lti, w.Q, w.R);
  const GainMatrix K =
      (w.R + lti.B.transpose() * P * lti.B).llt().solve(lti.B.transpose() * P * lti.A);
  const Matrix10d Ac = lti.A - lti.B * K;
  const Matrix10d res = w.Q + K.transpose() * w.R * K + Ac.transpose() * P * Ac - P;
  EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-9);
  Eigen::SelfAdjointEigenSolver<Matrix10d> es(P);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Precompute, PenaltyAugmentedWeights) {
  ReferenceTrajectory ref;
  ref.omega = 1.0;
  std::mt19937_64 rng(11);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  const int N = 5;
  const double rho = 3.0;
  const SolverPlan plan = constrained_plan(ref, 0.4, N, cfg, m, rho);
  const SolverPlan plan0 = constrained_plan(ref, 0.4, N, cfg, m, 0.0);
  const SolverPlan plan2 = constrained_plan(ref, 0.4, N, cfg, m, 2.0 * rho);

  for (int k = 0; k < N; ++k) {
    Matrix10d acc = Matrix10d::Zero();
    for (const SocConstraint& c : plan.stages[k].soc) acc += c.F.transpose() * c.F;
    acc += plan.stages[k].S.transpose() * plan.stages[k].S;
    const Matrix10d expect = plan.cost.Q[k] + rho * acc;
    EXPECT_LT((plan.Qtilde[k] - 0.5 * (expect + expect.transpose())).cwiseAbs().maxCoeff(),
              1e-12);
    // rho = 0 leaves the tracking weights untouched; doubling rho doubles the
    // penalty part.
    EXPECT_LT((plan0.Qtilde[k] - plan.cost.Q[k]).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((plan2.Qtilde[k] - plan.cost.Q[k] - 2.0 * (plan.Qtilde[k] - plan.cost.Q[k]))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
    Eigen::SelfAdjointEigenSolver<Matrix10d> es(plan.Qtilde[k]);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(Precompute, PlanInternalConsistency) {
  ReferenceTrajectory ref;
  ref.omega = 1.2;
  std::mt19937_64 rng(13);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  const int N = 6;
  const SolverPlan plan = constrained_plan(ref, 1.0, N, cfg, m);

  // Gains and cost-to-go satisfy the Riccati recursion under Qtilde.
  for (int k = 0; k < N; ++k) {
    const Matrix4d M = plan.cost.R + plan.lti.B.transpose() * plan.P[k + 1] * plan.lti.B;
    EXPECT_LT((plan.Minv[k] * M - Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((M * plan.K[k] - plan.lti.B.transpose() * plan.P[k + 1] * plan.lti.A)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-8);
    const Matrix10d Ac = plan.lti.A - plan.lti.B * plan.K[k];
    const Matrix10d res = plan.Qtilde[k] + plan.K[k].transpose() * plan.cost.R * plan.K[k] +
                          Ac.transpose() * plan.P[k + 1] * Ac - plan.P[k];
    EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-8);
  }
  // Radii factorization matches I + C'C + T'T.
  Eigen::Matrix<double, 9, 9> W = Eigen::Matrix<double, 9, 9>::Identity();
  W += plan.stages[0].C.transpose() * plan.stages[0].C;
  W += plan.stages[0].T.transpose() * plan.stages[0].T;
  const Eigen::Matrix<double, 9, 9> recon = plan.radii_llt.matrixL() *
                                            Eigen::Matrix<double, 9, 9>(plan.radii_llt.matrixL())
                                                .transpose();
  EXPECT_LT((recon - W).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Precompute, InputValidation) {
  ReferenceTrajectory ref;
  const QuadCost cost = tracking_cost(ref, 0.0, 0.1, 3, weights());
  const std::vector<FlatState> zr = sample_states(ref, 0.0, 0.1, 4);
  std::vector<LinGpStage> lin;
  for (int k = 0; k < 2; ++k) lin.push_back(LinGpStage::zero(zr[k]));  // one short
  ConstraintConfig cfg;
  EXPECT_THROW(precompute(lin, zr, cost, lti01(), cfg, 5.0), std::invalid_argument);
  lin.push_back(LinGpStage::zero(zr[2]));
  EXPECT_THROW(precompute(lin, zr, cost, lti01(), cfg, -1.0), std::invalid_argument);
  EXPECT_NO_THROW(precompute(lin, zr, cost, lti01(), cfg, 5.0));
  SolverPlan empty;
  AdmmWorkspace ws;
  EXPECT_THROW(solve(empty, FlatState::Zero(), ws, false), std::invalid_argument);
}

TEST(Admm, GammaUpdateIsStationaryPoint) {
  ReferenceTrajectory ref;
  ref.omega = 1.1;
  std::mt19937_64 rng(17);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  const SolverPlan plan = constrained_plan(ref, 0.7, 4, cfg, m);
  AdmmWorkspace ws;
  ws.resize(plan);
  std::normal_distribution<double> n;
  for (int k = 0; k < plan.N; ++k) {
    for (int i = 0; i < 9; ++i) {
      ws.radius_slack[k](i) = n(g_rng);
      ws.radius_dual[k](i) = n(g_rng);
    }
    for (int i = 0; i < 5; ++i) ws.coupling_dual[k](i) = n(g_rng);
    ws.tilt_lhs_slack[k] = n(g_rng);
    ws.tilt_lhs_dual[k] = n(g_rng);
  }
  ASSERT_TRUE(primal_update(plan, ws, ref.eval(0.7).first));

  // gamma_k minimizes ||g - (tau - lt/rho)||^2 + ||Cg - (d - mu/rho)||^2
  //                 + (Tg - (rhat - nu/rho))^2, so its gradient vanishes.
  const double rho = plan.rho;
  for (int k = 0; k < plan.N; ++k) {
    const StageConstraintSet& st = plan.stages[k];
    Vector9d grad = ws.radii[k] - (ws.radius_slack[k] - ws.radius_dual[k] / rho);
    grad += st.C.transpose() *
            (st.C * ws.radii[k] - (st.d - ws.coupling_dual[k] / rho));
    grad += st.T.transpose() *
            (st.T.dot(ws.radii[k]) - (ws.tilt_lhs_slack[k] - ws.tilt_lhs_dual[k] / rho));
    EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-10) << "stage " << k;
  }
}

TEST(Admm, GammaDecoupledClosedForm) {
  ReferenceTrajectory ref;
  const int N = 3;
  const double rho = 3.0;
  SolverPlan plan = precompute_unconstrained(tracking_cost(ref, 0.0, 0.1, N, weights()),
                                             lti01(), rho);
  plan.constrained = true;
  plan.stages.resize(N);  // zero-row cones, C = 0, T = 0, S = 0
  const int indices[8] = {0, 1, 2, 3, 4, 5, 7, 8};
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < 8; ++j) plan.stages[k].soc[j].gamma_index = indices[j];
  plan.radii_llt.compute(Eigen::Matrix<double, 9, 9>::Identity());

  AdmmWorkspace ws;
  ws.resize(plan);
  std::normal_distribution<double> n;
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < 9; ++i) {
      ws.radius_slack[k](i) = n(g_rng);
      ws.radius_dual[k](i) = n(g_rng);
    }
  ASSERT_TRUE(primal_update(plan, ws, FlatState::Zero()));
  for (int k = 0; k < N; ++k) {
    const Vector9d expect = ws.radius_slack[k] - ws.radius_dual[k] / rho;
    EXPECT_LT((ws.radii[k] - expect).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Admm, SlackFamiliesFeasibleAfterProjection) {
  ReferenceTrajectory ref;
  ref.amplitude = 0.9;
  ref.omega = 1.5;
  std::mt19937_64 rng(19);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  cfg.c_max = 13.0;
  const SolverPlan plan = constrained_plan(ref, M_PI / 6.0, 8, cfg, m);
  AdmmWorkspace ws;
  const SolveResult res =
      solve(plan, ref.eval(M_PI / 6.0).first, ws, false, 0.0, 0.0, 4);
  EXPECT_EQ(res.status, SolveStatus::kMaxIters);
  for (int k = 0; k < plan.N; ++k) {
    for (int j = 0; j < 8; ++j) {
      const int gi = plan.stages[k].soc[j].gamma_index;
      EXPECT_LE(ws.soc_slack[k][j].norm(), ws.radius_slack[k](gi) + 1e-12);
    }
    EXPECT_GE(ws.radius_slack[k](6), 0.0);
    EXPECT_LE(ws.tilt_lhs_slack[k], ws.tilt_rhs_slack[k] + 1e-15);
  }
}

TEST(Admm, DualAscentMatchesResidualStep) {
  ReferenceTrajectory ref;
  ref.omega = 1.3;
  std::mt19937_64 rng(23);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  const SolverPlan plan = constrained_plan(ref, 0.2, 4, cfg, m);
  AdmmWorkspace ws;
  solve(plan, ref.eval(0.2).first, ws, false, 0.0, 0.0, 3);  // some nonzero state
  ASSERT_TRUE(primal_update(plan, ws, ref.eval(0.2).first));
  slack_update(plan, ws);

  const auto soc_before = ws.soc_dual;
  const auto rad_before = ws.radius_dual;
  const auto cpl_before = ws.coupling_dual;
  const auto tl_before = ws.tilt_lhs_dual;
  const auto tr_before = ws.tilt_rhs_dual;
  dual_update(plan, ws);

  const double rho = plan.rho;
  for (int k = 0; k < plan.N; ++k) {
    const StageConstraintSet& st = plan.stages[k];
    for (int j = 0; j < 8; ++j) {
      const SocVec expect =
          soc_before[k][j] + rho * (st.soc[j].F * ws.states[k] + st.soc[j].g - ws.soc_slack[k][j]);
      EXPECT_LT((ws.soc_dual[k][j] - expect).cwiseAbs().maxCoeff(), 1e-12);
    }
    const Vector9d er = rad_before[k] + rho * (ws.radii[k] - ws.radius_slack[k]);
    EXPECT_LT((ws.radius_dual[k] - er).cwiseAbs().maxCoeff(), 1e-12);
    const Vector5d ec = cpl_before[k] + rho * (st.C * ws.radii[k] - st.d);
    EXPECT_LT((ws.coupling_dual[k] - ec).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(ws.tilt_lhs_dual[k],
                tl_before[k] + rho * (st.T.dot(ws.radii[k]) - ws.tilt_lhs_slack[k]), 1e-12);
    EXPECT_NEAR(ws.tilt_rhs_dual[k],
                tr_before[k] + rho * (st.S.dot(ws.states[k]) + st.w - ws.tilt_rhs_slack[k]),
                1e-12);
  }
}

// Acceptance: with no constraints compiled, the ADMM solve must reproduce the
// closed-form LQR law in a single iteration.
TEST(Admm, UnconstrainedMatchesLqrClosedForm) {
  ReferenceTrajectory ref;
  ref.omega = 1.0;
  const int N = 10;
  const QuadCost cost = tracking_cost(ref, 0.3, 0.1, N, weights());
  const SolverPlan plan = precompute_unconstrained(cost, lti01());
  const LqrSolution lqr = lqr_backward(cost, lti01());

  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    FlatState z0;
    for (int i = 0; i < kStateDim; ++i) z0(i) = n(g_rng);
    AdmmWorkspace ws;
    const SolveResult res = solve(plan, z0, ws, false);
    EXPECT_EQ(res.status, SolveStatus::kConverged);
    EXPECT_EQ(res.iterations, 1);
    const Vector4d v_lqr = -lqr.K[0] * z0 - lqr.d[0];
    EXPECT_LT((res.v0 - v_lqr).cwiseAbs().maxCoeff(), 1e-6);

    // Full predicted trajectory equals the LQR rollout.
    FlatState z = z0;
    for (int k = 0; k < N; ++k) {
      const Vector4d v = -lqr.K[k] * z - lqr.d[k];
      z = lti01().A * z + lti01().B * v;
      EXPECT_LT((res.z_pred[k] - z).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

struct Instance {
  SolverPlan plan;
  FlatState z0;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ReferenceTrajectory ref;
  ref.omega = 1.2 + 0.6 * u01(rng);
  const double amax = 0.95 * 2.25 / (ref.omega * ref.omega);
  ref.amplitude = 0.45 + (amax - 0.45) * u01(rng);
  const double t0 = u01(rng) * 2.0 * M_PI / ref.omega;
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  cfg.c_max = 13.0 + 4.0 * u01(rng);
  Instance inst{constrained_plan(ref, t0, 3, cfg, m), ref.eval(t0).first};
  std::normal_distribution<double> dz(0.0, 0.02);
  for (int i = 0; i < kStateDim; ++i) inst.z0(i) += dz(rng);
  return inst;
}

// Acceptance: on random constrained instances the ADMM solution matches an
// independent interior-point solve of the same SOCP.
TEST(Admm, AgreesWithInteriorPointOnRandomInstances) {
  std::mt19937_64 rng(31);
  int solved = 0, active = 0, attempts = 0;
  while (solved < 50 && attempts < 500) {
    ++attempts;
    const Instance inst = random_instance(rng);
    const oracle::IpmResult ipm = oracle::solve_socp(inst.plan, inst.z0);
    if (!ipm.ok) continue;  // instance infeasible (or no strict interior)
    ASSERT_LT(oracle::constraint_violation(inst.plan, ipm.states, ipm.radii), 1e-8);

    AdmmWorkspace ws;
    const SolveResult res = solve(inst.plan, inst.z0, ws, false, 1e-9, 1e-9, 30000);
    ASSERT_EQ(res.status, SolveStatus::kConverged) << "attempt " << attempts;

    const double J_admm = eval_tracking_objective(inst.plan.cost, ws.states, ws.inputs);
    const double gap = std::abs(J_admm - ipm.objective) / std::max(1.0, std::abs(ipm.objective));
    EXPECT_LT(gap, 1e-3) << "attempt " << attempts;
    EXPECT_LT(oracle::constraint_violation(inst.plan, ws.states, ws.radii), 1e-6);

    // Count instances where the constraints actually bind: the constrained
    // optimum must cost more than the unconstrained LQR optimum.
    const SolverPlan unc = precompute_unconstrained(inst.plan.cost, inst.plan.lti);
    AdmmWorkspace wsu;
    solve(unc, inst.z0, wsu, false);
    const double J_unc = eval_tracking_objective(inst.plan.cost, wsu.states, wsu.inputs);
    if (J_admm - J_unc > 1e-6 * std::max(1.0, std::abs(J_unc))) ++active;
    ++solved;
  }
  ASSERT_EQ(solved, 50) << "only " << solved << " feasible instances in " << attempts
                        << " attempts";
  RecordProperty("active_instances", active);
  EXPECT_GE(active, 5);
}

TEST(Admm, WarmStartReusesNeighboringSolution) {
  // Every window of this reference admits a strictly feasible plan (peak
  // thrust demand stays under the tightened budget), so both solve modes
  // converge and only the iteration counts differ.
  ReferenceTrajectory ref;
  ref.amplitude = 0.5;
  ref.omega = 1.5;
  std::mt19937_64 rng(37);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  const int N = 10, steps = 20;
  const double dt = 0.1;

  long cold_total = 0, warm_total = 0;
  AdmmWorkspace ws_warm;
  for (int i = 0; i < steps; ++i) {
    const double t = 0.3 + i * dt;
    const SolverPlan plan = constrained_plan(ref, t, N, cfg, m);
    FlatState z0 = ref.eval(t).first;
    z0(0) += 0.01;
    z0(5) -= 0.02;

    AdmmWorkspace ws_cold;
    const SolveResult cold = solve(plan, z0, ws_cold, false, 1e-7, 1e-7, 30000);
    const SolveResult warm = solve(plan, z0, ws_warm, i > 0, 1e-7, 1e-7, 30000);
    ASSERT_EQ(cold.status, SolveStatus::kConverged);
    ASSERT_EQ(warm.status, SolveStatus::kConverged);
    if (i == 0) continue;  // first warm call is itself cold
    cold_total += cold.iterations;
    warm_total += warm.iterations;
    // Both converge to the same optimum regardless of the start.
    EXPECT_LT((cold.v0 - warm.v0).cwiseAbs().maxCoeff(),
              1e-5 * std::max(1.0, cold.v0.cwiseAbs().maxCoeff()));
  }
  RecordProperty("cold_iterations", static_cast<int>(cold_total));
  RecordProperty("warm_iterations", static_cast<int>(warm_total));
  EXPECT_LT(warm_total, cold_total);
  EXPECT_LE(10 * warm_total, 9 * cold_total);
}

TEST(Admm, FreshAffineTermsMatchRebuiltPlan) {
  ReferenceTrajectory ref;
  const int N = 8;
  const QuadCost cost_a = tracking_cost(ref, 0.0, 0.1, N, weights());
  const QuadCost cost_b = tracking_cost(ref, 0.5, 0.1, N, weights());
  const SolverPlan plan_a = precompute_unconstrained(cost_a, lti01());
  const SolverPlan plan_b = precompute_unconstrained(cost_b, lti01());
  const FlatState z0 = ref.eval(0.5).first;
  const AffineCost fresh = affine_terms(cost_b);
  AdmmWorkspace ws1, ws2;
  const SolveResult r1 = solve(plan_a, z0, ws1, false, 1e-4, 1e-4, 50, &fresh);
  const SolveResult r2 = solve(plan_b, z0, ws2, false);
  EXPECT_LT((r1.v0 - r2.v0).cwiseAbs().maxCoeff(), 1e-12);
  for (int k = 0; k < N; ++k)
    EXPECT_LT((r1.z_pred[k] - r2.z_pred[k]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Admm, DeterministicAcrossRepeatedSolves) {
  ReferenceTrajectory ref;
  ref.amplitude = 0.9;
  ref.omega = 1.5;
  std::mt19937_64 rng(41);
  const GpModel m = trajectory_trained_gp(ref, rng);
  ConstraintConfig cfg;
  cfg.c_max = 13.0;
  const SolverPlan plan = constrained_plan(ref, 0.8, 10, cfg, m);
  const FlatState z0 = ref.eval(0.8).first;
  AdmmWorkspace ws1, ws2;
  const SolveResult r1 = solve(plan, z0, ws1, false);
  const SolveResult r2 = solve(plan, z0, ws2, false);
  EXPECT_EQ(r1.iterations, r2.iterations);
  EXPECT_EQ(0, std::memcmp(r1.v0.data(), r2.v0.data(), sizeof(double) * 4));
  for (int k = 0; k < plan.N; ++k)
    EXPECT_EQ(0, std::memcmp(r1.z_pred[k].data(), r2.z_pred[k].data(), sizeof(double) * 10));
}

TEST(Admm, ConstraintViolationDrivenDown) {
  // Search the instance distribution for a feasible case whose constraints
  // actually bind, then compare feasibility after 10 iterations vs at
  // convergence.
  std::mt19937_64 rng(53);
  bool found = false;
  for (int attempt = 0; attempt < 200 && !found; ++attempt) {
    const Instance inst = random_instance(rng);
    const oracle::IpmResult ipm = oracle::solve_socp(inst.plan, inst.z0);
    if (!ipm.ok) continue;
    AdmmWorkspace ws;
    const SolveResult res = solve(inst.plan, inst.z0, ws, false, 1e-9, 1e-9, 30000);
    ASSERT_EQ(res.status, SolveStatus::kConverged);
    const double J = eval_tracking_objective(inst.plan.cost, ws.states, ws.inputs);
    const SolverPlan unc = precompute_unconstrained(inst.plan.cost, inst.plan.lti);
    AdmmWorkspace wsu;
    solve(unc, inst.z0, wsu, false);
    const double J_unc = eval_tracking_objective(inst.plan.cost, wsu.states, wsu.inputs);
    if (J - J_unc <= 1e-6 * std::max(1.0, std::abs(J_unc))) continue;  // inactive

    found = true;
    AdmmWorkspace ws10;
    solve(inst.plan, inst.z0, ws10, false, 0.0, 0.0, 10);
    const double v10 = oracle::constraint_violation(inst.plan, ws10.states, ws10.radii);
    const double v_end = oracle::constraint_violation(inst.plan, ws.states, ws.radii);
    RecordProperty("violation_after_10", std::to_string(v10));
    RecordProperty("violation_at_end", std::to_string(v_end));
    EXPECT_GT(v10, 1e-3);  // the active constraint starts out violated
    EXPECT_LT(v_end, 1e-6);
    EXPECT_LT(v_end, v10);
  }
  ASSERT_TRUE(found);
}

TEST(Admm, NonFiniteStateDiverges) {
  ReferenceTrajectory ref;
  const SolverPlan plan =
      precompute_unconstrained(tracking_cost(ref, 0.0, 0.1, 5, weights()), lti01());
  FlatState z0 = FlatState::Zero();
  z0(3) = std::numeric_limits<double>::quiet_NaN();
  AdmmWorkspace ws;
  const SolveResult res = solve(plan, z0, ws, false);
  EXPECT_EQ(res.status, SolveStatus::kDiverged);
}

}  // namespace
}  // namespace lbmpc
