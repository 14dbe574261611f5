#pragma once
// Conic building blocks for the chance-constrained thrust limits:
//   - chi-squared (3 dof) and standard-normal quantile functions,
//   - closed-form projections onto the second-order cone and a half-space,
//   - compilation of the probabilistic thrust ball / tilt cone into
//     per-stage SOC data that is affine in the flat state.
//
// Compiled stage layout (radii vector gamma in R^9):
//   gamma_1..gamma_3  bound the mean thrust vector norm (three identical
//                     ball cones, kept distinct for solver bookkeeping),
//   gamma_4..gamma_6  bound the per-axis posterior std of the disturbance,
//   gamma_7           tilt budget, trivial cone gamma_7 >= 0,
//   gamma_8, gamma_9  bound the horizontal mean thrust.
// Couplings: gamma_i + chi_b gamma_{i+3} = c_max (i = 1..3) back the thrust
// budget off by a chi-square quantile of the worst-axis std;
// gamma_8 = gamma_7 - chi_c gamma_4 and gamma_9 = gamma_7 - chi_c gamma_5;
// the half-space phi_inv gamma_6 + gamma_7 / tan(theta_max) <= S z + w ties
// the tilt budget to the vertical thrust mean lowered by a Gaussian quantile
// of the vertical std.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "lbmpc/flat.hpp"
#include "lbmpc/gp.hpp"

namespace lbmpc {

namespace detail {

// Regularized lower incomplete gamma P(a, x); series expansion for small x,
// continued fraction otherwise.
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw std::invalid_argument("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double log_pref = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(log_pref);
  }
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(log_pref) * h;
}

}  // namespace detail

inline double chi2_cdf_3dof(double x) { return x <= 0.0 ? 0.0 : detail::gamma_p(1.5, 0.5 * x); }

// Inverse CDF of the chi-squared distribution with 3 dof; bisection bracketed
// by doubling, then Newton polish with the closed-form density.
inline double chi2_quantile_3dof(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("chi2_quantile_3dof: p must be in (0,1)");
  double lo = 0.0, hi = 1.0;
  while (chi2_cdf_3dof(hi) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf_3dof(mid) < p ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int i = 0; i < 4; ++i) {
    const double pdf = std::sqrt(x) * std::exp(-0.5 * x) / std::sqrt(2.0 * M_PI);
    if (pdf <= 0.0) break;
    x -= (chi2_cdf_3dof(x) - p) / pdf;
  }
  return x;
}

// Standard-normal inverse CDF via bisection on erf plus Newton polish.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  const double target = 2.0 * p - 1.0;  // erf(y) with x = sqrt(2) y
  double lo = -15.0, hi = 15.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erf(mid) < target ? lo : hi) = mid;
  }
  double y = 0.5 * (lo + hi);
  for (int i = 0; i < 4; ++i) {
    const double deriv = 2.0 / std::sqrt(M_PI) * std::exp(-y * y);
    if (deriv <= 0.0) break;
    y -= (std::erf(y) - target) / deriv;
  }
  return std::sqrt(2.0) * y;
}

// Euclidean projection of (s, v) onto the second-order cone ||v|| <= s:
// zero when ||v|| <= -s, identity when ||v|| <= s, else the boundary point
// ((s + ||v||)/2) * (1, v/||v||).
template <typename Vec>
std::pair<double, Vec> project_soc(double s, const Vec& v) {
  const double nv = v.norm();
  if (nv <= -s) return {0.0, Vec::Zero(v.size())};
  if (nv <= s) return {s, v};
  const double t = 0.5 * (s + nv);
  return {t, (t / nv) * v};
}

// Projection of (a, b) onto the half-plane a <= b.
inline std::pair<double, double> project_halfspace(double a, double b) {
  if (a <= b) return {a, b};
  const double m = 0.5 * (a + b);
  return {m, m};
}

struct ConstraintConfig {
  double c_max = 20.0;              // mass-normalized thrust bound, m/s^2
  double theta_max = M_PI / 4.0;    // tilt bound, rad
  double p_b = 0.95;                // thrust-ball satisfaction probability
  double p_c = 0.95;                // tilt-cone satisfaction probability
  // Bound the tilt inequality by the disturbance-mean term alone instead of
  // the full vertical thrust mean (comparison mode; see build notes).
  bool cone_uses_raw_mean = false;

  void validate() const {
    if (!(c_max > kGravity))
      throw std::invalid_argument("constraints: c_max must exceed g (hover feasibility)");
    if (!(theta_max > 0.0 && theta_max < M_PI / 2.0))
      throw std::invalid_argument("constraints: theta_max must be in (0, pi/2)");
    if (!(p_b > 0.5 && p_b < 1.0) || !(p_c > 0.5 && p_c < 1.0))
      throw std::invalid_argument("constraints: probabilities must be in (0.5, 1)");
  }
};

// Row capacity 11 covers the largest cone (the variance cones in the
// augmented 11-dim coordinates); storage stays on the stack.
using SocVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 11, 1>;
using SocMat = Eigen::Matrix<double, Eigen::Dynamic, kStateDim, Eigen::ColMajor, 11, kStateDim>;
using Vector9d = Eigen::Matrix<double, 9, 1>;
using Vector5d = Eigen::Matrix<double, 5, 1>;
using RowVector9d = Eigen::Matrix<double, 1, 9>;
using RowVector10d = Eigen::Matrix<double, 1, kStateDim>;

// One cone ||F z + g|| <= gamma_[gamma_index] affine in the flat state.
struct SocConstraint {
  SocMat F;
  SocVec g;
  int gamma_index = 0;  // 0-based slot in the 9-dim radii vector
  int rows() const { return static_cast<int>(F.rows()); }
};

struct StageConstraintSet {
  std::array<SocConstraint, 8> soc;  // ball j=1..3, variance j=4..6, cone j=8..9
  Eigen::Matrix<double, 5, 9> C = Eigen::Matrix<double, 5, 9>::Zero();
  Vector5d d = Vector5d::Zero();
  RowVector9d T = RowVector9d::Zero();
  RowVector10d S = RowVector10d::Zero();
  double w = 0.0;
  double chi_b = 0.0, chi_c = 0.0, phi_inv = 0.0;
  std::string warning;  // non-empty when the config leaves no thrust budget
};

// Compile the stage constraints from the GP linearization at z^r. All
// [1, z - z^r] augmentation offsets are folded into g so every cone is
// affine in the flat state z alone.
inline StageConstraintSet build_stage_constraints(const LinGpStage& lin, const FlatState& zr,
                                                  const ConstraintConfig& cfg) {
  cfg.validate();
  StageConstraintSet s;
  s.chi_b = std::sqrt(chi2_quantile_3dof(cfg.p_b));
  s.chi_c = std::sqrt(chi2_quantile_3dof(cfg.p_c));
  s.phi_inv = normal_quantile(cfg.p_c);

  // Mean thrust vector c(z) = a(z) + g z_W - mu(z) as an affine map F z + g0.
  Eigen::Matrix<double, 3, kStateDim> A_sel = Eigen::Matrix<double, 3, kStateDim>::Zero();
  A_sel(0, 6) = A_sel(1, 7) = A_sel(2, 8) = 1.0;
  Eigen::Matrix<double, 3, kStateDim> G;
  Eigen::Vector3d m0;
  for (int ax = 0; ax < 3; ++ax) {
    G.row(ax) = lin.mu_grad(ax).transpose();
    m0(ax) = lin.mu_bar[ax](0);
  }
  const Eigen::Matrix<double, 3, kStateDim> F_ball = A_sel - G;
  const Eigen::Vector3d g_ball = Eigen::Vector3d(0, 0, kGravity) - m0 + G * zr;

  for (int j = 0; j < 3; ++j) {
    s.soc[j].F = F_ball;
    s.soc[j].g = g_ball;
    s.soc[j].gamma_index = j;
  }

  // Per-axis posterior std: ||L' zbar|| with zbar = [1; z - z^r], so
  // F = L' restricted to the z block and g = L' [1; -z^r].
  for (int ax = 0; ax < 3; ++ax) {
    const Matrix11d Lt = lin.L_bar[ax].transpose();
    Vector11d e = Vector11d::Zero();
    e(0) = 1.0;
    e.tail<kStateDim>() = -zr;
    s.soc[3 + ax].F = Lt.rightCols<kStateDim>();
    s.soc[3 + ax].g = Lt * e;
    s.soc[3 + ax].gamma_index = 3 + ax;
  }

  // Horizontal mean thrust cones share the ball rows.
  for (int j = 0; j < 2; ++j) {
    s.soc[6 + j].F = F_ball.topRows<2>();
    s.soc[6 + j].g = g_ball.head<2>();
    s.soc[6 + j].gamma_index = 7 + j;
  }

  s.C(0, 0) = 1.0;
  s.C(0, 3) = s.chi_b;
  s.C(1, 1) = 1.0;
  s.C(1, 4) = s.chi_b;
  s.C(2, 2) = 1.0;
  s.C(2, 5) = s.chi_b;
  s.C(3, 7) = 1.0;
  s.C(3, 6) = -1.0;
  s.C(3, 3) = s.chi_c;
  s.C(4, 8) = 1.0;
  s.C(4, 6) = -1.0;
  s.C(4, 4) = s.chi_c;
  s.d << cfg.c_max, cfg.c_max, cfg.c_max, 0.0, 0.0;

  s.T(5) = s.phi_inv;
  s.T(6) = 1.0 / std::tan(cfg.theta_max);

  if (cfg.cone_uses_raw_mean) {
    s.S = G.row(2);
    s.w = m0(2) - G.row(2).dot(zr);
  } else {
    s.S = F_ball.row(2);
    s.w = g_ball(2);
  }

  // Vacuous-budget diagnostic: tightening at the linearization point already
  // consumes the whole thrust bound.
  double max_std = 0.0;
  for (int ax = 0; ax < 3; ++ax) max_std = std::max(max_std, std::sqrt(lin.var_tilde(ax, zr)));
  if (cfg.c_max <= s.chi_b * max_std)
    s.warning = "constraint budget vacuous: c_max <= chi_b * posterior std at base point";

  return s;
}

}  // namespace lbmpc
