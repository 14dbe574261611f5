#pragma once
// Flat-space model of a multirotor: per-axis triple integrators plus a yaw
// integrator, exact zero-order-hold discretization, analytic reference
// generators, and quadratic tracking costs.
//
// Flat state layout (fixed, every downstream consumer relies on it):
//   z = [p_x, p_y, p_z, v_x, v_y, v_z, a_x, a_y, a_z, psi]
// Flat input layout:
//   u = [j_x, j_y, j_z, psi_dot]

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lbmpc {

inline constexpr int kStateDim = 10;
inline constexpr int kInputDim = 4;
inline constexpr double kGravity = 9.81;  // m/s^2

using FlatState = Eigen::Matrix<double, kStateDim, 1>;
using FlatInput = Eigen::Matrix<double, kInputDim, 1>;
using Matrix10d = Eigen::Matrix<double, kStateDim, kStateDim>;
using Matrix4d = Eigen::Matrix<double, kInputDim, kInputDim>;
using InputMap = Eigen::Matrix<double, kStateDim, kInputDim>;
using GainMatrix = Eigen::Matrix<double, kInputDim, kStateDim>;
using Vector10d = FlatState;
using Vector4d = FlatInput;

// Segment accessors for the fixed layout above.
inline Eigen::Vector3d position(const FlatState& z) { return z.segment<3>(0); }
inline Eigen::Vector3d velocity(const FlatState& z) { return z.segment<3>(3); }
inline Eigen::Vector3d accel(const FlatState& z) { return z.segment<3>(6); }
inline double yaw(const FlatState& z) { return z(9); }
inline Eigen::Vector3d jerk(const FlatInput& u) { return u.segment<3>(0); }
inline double yaw_rate(const FlatInput& u) { return u(3); }

struct FlatLti {
  Matrix10d A;
  InputMap B;
  double dt = 0.0;
};

// Exact ZOH of the continuous flat dynamics. Per position axis the state
// block is [1, dt, dt^2/2; 0, 1, dt; 0, 0, 1] with input column
// [dt^3/6, dt^2/2, dt]; yaw is a plain integrator.
inline FlatLti discretize_flat(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("discretize_flat: dt must be positive");
  FlatLti lti;
  lti.dt = dt;
  lti.A.setIdentity();
  lti.B.setZero();
  for (int axis = 0; axis < 3; ++axis) {
    const int p = axis, v = 3 + axis, a = 6 + axis;
    lti.A(p, v) = dt;
    lti.A(p, a) = 0.5 * dt * dt;
    lti.A(v, a) = dt;
    lti.B(p, axis) = dt * dt * dt / 6.0;
    lti.B(v, axis) = 0.5 * dt * dt;
    lti.B(a, axis) = dt;
  }
  lti.B(9, 3) = dt;
  return lti;
}

enum class RefKind { kFigureEight, kSinusoidX, kCircle, kHover };

inline RefKind ref_kind_from_string(const std::string& s) {
  if (s == "figure8") return RefKind::kFigureEight;
  if (s == "sinusoid-x") return RefKind::kSinusoidX;
  if (s == "circle") return RefKind::kCircle;
  if (s == "hover") return RefKind::kHover;
  throw std::invalid_argument("reference: unknown kind '" + s + "'");
}

inline std::string to_string(RefKind k) {
  switch (k) {
    case RefKind::kFigureEight: return "figure8";
    case RefKind::kSinusoidX: return "sinusoid-x";
    case RefKind::kCircle: return "circle";
    case RefKind::kHover: return "hover";
  }
  return "?";
}

// Analytic reference generators; v, a, jerk are exact time derivatives of p.
// The figure-8 flies x = A sin(w t), z = A sin(2 w t) in the x-z plane with
// zero yaw.
inline std::pair<FlatState, FlatInput> reference(RefKind kind, double amplitude, double omega,
                                                 double t,
                                                 const Eigen::Vector3d& hover_p = Eigen::Vector3d::Zero(),
                                                 double hover_psi = 0.0) {
  if (omega < 0.0) throw std::invalid_argument("reference: omega must be nonnegative");
  FlatState z = FlatState::Zero();
  FlatInput u = FlatInput::Zero();
  const double A = amplitude;
  switch (kind) {
    case RefKind::kFigureEight: {
      const double w = omega, s1 = std::sin(w * t), c1 = std::cos(w * t);
      const double s2 = std::sin(2 * w * t), c2 = std::cos(2 * w * t);
      z(0) = A * s1;
      z(3) = A * w * c1;
      z(6) = -A * w * w * s1;
      u(0) = -A * w * w * w * c1;
      z(2) = A * s2;
      z(5) = 2 * A * w * c2;
      z(8) = -4 * A * w * w * s2;
      u(2) = -8 * A * w * w * w * c2;
      break;
    }
    case RefKind::kSinusoidX: {
      const double w = omega;
      z(0) = A * std::sin(w * t);
      z(3) = A * w * std::cos(w * t);
      z(6) = -A * w * w * std::sin(w * t);
      u(0) = -A * w * w * w * std::cos(w * t);
      break;
    }
    case RefKind::kCircle: {
      const double w = omega;
      z(0) = A * std::cos(w * t);
      z(1) = A * std::sin(w * t);
      z(3) = -A * w * std::sin(w * t);
      z(4) = A * w * std::cos(w * t);
      z(6) = -A * w * w * std::cos(w * t);
      z(7) = -A * w * w * std::sin(w * t);
      u(0) = A * w * w * w * std::sin(w * t);
      u(1) = -A * w * w * w * std::cos(w * t);
      break;
    }
    case RefKind::kHover: {
      z.segment<3>(0) = hover_p;
      z(9) = hover_psi;
      break;
    }
  }
  return {z, u};
}

struct ReferenceTrajectory {
  RefKind kind = RefKind::kFigureEight;
  double amplitude = 0.5;  // m
  double omega = 0.5;      // rad/s
  Eigen::Vector3d hover_p = Eigen::Vector3d::Zero();
  double hover_psi = 0.0;
  // Finite for clipped references; analytic generators default to unbounded.
  double duration = std::numeric_limits<double>::infinity();

  std::pair<FlatState, FlatInput> eval(double t) const {
    return reference(kind, amplitude, omega, t, hover_p, hover_psi);
  }
};

inline std::vector<FlatState> sample_states(const ReferenceTrajectory& ref, double t0, double dt,
                                            int count) {
  std::vector<FlatState> out(count);
  for (int k = 0; k < count; ++k) out[k] = ref.eval(t0 + k * dt).first;
  return out;
}

inline std::vector<FlatInput> sample_inputs(const ReferenceTrajectory& ref, double t0, double dt,
                                            int count) {
  std::vector<FlatInput> out(count);
  for (int k = 0; k < count; ++k) out[k] = ref.eval(t0 + k * dt).second;
  return out;
}

struct TrackingWeights {
  Matrix10d Q = Matrix10d::Identity();
  Matrix4d R = Matrix4d::Identity();
  Matrix10d Qf = Matrix10d::Identity();
};

// Stage costs 1/2 z'Qz + q'z + 1/2 v'Rv + r'v plus a terminal pair. Q_k may
// vary per stage (the solver substitutes penalty-augmented copies).
struct QuadCost {
  std::vector<Matrix10d> Q;  // size N
  Matrix10d Qf = Matrix10d::Zero();
  Matrix4d R = Matrix4d::Zero();
  std::vector<Vector10d> q;  // size N
  Vector10d qf = Vector10d::Zero();
  std::vector<Vector4d> r;  // size N
  int horizon() const { return static_cast<int>(Q.size()); }
};

// q_k = -Q z_k^r, r_k = -R v_k^r, q_f = -Q_f z_N^r: the quadratic form then
// equals 1/2 ||z - z^r||_Q^2 + 1/2 ||v - v^r||_R^2 up to a constant.
inline QuadCost tracking_cost(const ReferenceTrajectory& ref, double t_start, double dt, int N,
                              const TrackingWeights& w) {
  if (N < 1) throw std::invalid_argument("tracking_cost: N must be >= 1");
  if (t_start + N * dt > ref.duration)
    throw std::invalid_argument("tracking_cost: window exceeds reference duration");
  QuadCost c;
  c.Q.assign(N, w.Q);
  c.Qf = w.Qf;
  c.R = w.R;
  c.q.resize(N);
  c.r.resize(N);
  for (int k = 0; k < N; ++k) {
    const auto [zr, vr] = ref.eval(t_start + k * dt);
    c.q[k] = -w.Q * zr;
    c.r[k] = -w.R * vr;
  }
  c.qf = -w.Qf * ref.eval(t_start + N * dt).first;
  return c;
}

// Objective value for a rollout; includes the (decision-independent) stage-0
// state term so independent solvers can be compared on identical numbers.
inline double eval_tracking_objective(const QuadCost& c, const std::vector<FlatState>& z,
                                      const std::vector<FlatInput>& v) {
  const int N = c.horizon();
  if (static_cast<int>(z.size()) != N + 1 || static_cast<int>(v.size()) != N)
    throw std::invalid_argument("eval_tracking_objective: trajectory length mismatch");
  double J = 0.0;
  for (int k = 0; k < N; ++k) {
    J += 0.5 * z[k].dot(c.Q[k] * z[k]) + c.q[k].dot(z[k]);
    J += 0.5 * v[k].dot(c.R * v[k]) + c.r[k].dot(v[k]);
  }
  J += 0.5 * z[N].dot(c.Qf * z[N]) + c.qf.dot(z[N]);
  return J;
}

}  // namespace lbmpc
