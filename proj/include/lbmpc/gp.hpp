#pragma once
// Per-axis Gaussian-process regression of the flat-state disturbance d(z)
// with a squared-exponential kernel, analytic kernel derivatives, and
// linearization about a reference point (affine mean, quadratic variance).
//
// The three axes share one set of training inputs Z and are otherwise
// independent models over targets d_x, d_y, d_z.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbmpc/csv.hpp"
#include "lbmpc/flat.hpp"

namespace lbmpc {

using Vector11d = Eigen::Matrix<double, 11, 1>;
using Matrix11d = Eigen::Matrix<double, 11, 11>;

struct SeKernelParams {
  double sigma_eta2 = 1.0;    // prior variance, (m/s^2)^2
  double sigma_omega2 = 0.01; // observation noise variance, (m/s^2)^2
  Vector10d length_scales = Vector10d::Ones();  // diagonal of M

  void validate() const {
    if (!(sigma_eta2 > 0.0)) throw std::invalid_argument("kernel: sigma_eta2 must be > 0");
    if (sigma_omega2 < 0.0) throw std::invalid_argument("kernel: sigma_omega2 must be >= 0");
    if ((length_scales.array() <= 0.0).any())
      throw std::invalid_argument("kernel: length scales must be > 0");
  }
};

// Velocity dimensions get short scales (the drag disturbance varies with v);
// the remaining dimensions are softened.
inline SeKernelParams default_kernel_params() {
  SeKernelParams p;
  p.length_scales = Vector10d::Constant(10.0);
  p.length_scales.segment<3>(3).setConstant(1.0);
  return p;
}

// k(z, z') = sigma_eta2 * exp(-1/2 (z-z')' M^-2 (z-z')). The noise term
// sigma_omega2 enters only on the training diagonal (see fit).
inline double kernel(const Vector10d& z, const Vector10d& zp, const SeKernelParams& p) {
  const Eigen::ArrayXd r = (z - zp).array() / p.length_scales.array();
  return p.sigma_eta2 * std::exp(-0.5 * (r * r).sum());
}

// Gradient in the first argument: -M^-2 (z-z') k(z,z').
inline Vector10d kernel_grad1(const Vector10d& z, const Vector10d& zp, const SeKernelParams& p) {
  const Vector10d minv2r =
      ((z - zp).array() / (p.length_scales.array() * p.length_scales.array())).matrix();
  return -minv2r * kernel(z, zp, p);
}

// Gradient in the second argument: +M^-2 (z-z') k(z,z').
inline Vector10d kernel_grad2(const Vector10d& z, const Vector10d& zp, const SeKernelParams& p) {
  return -kernel_grad1(z, zp, p);
}

// Mixed second derivative d^2 k / dz dz': (M^-2 - M^-2 (z-z')(z-z')' M^-2) k.
inline Matrix10d kernel_hess(const Vector10d& z, const Vector10d& zp, const SeKernelParams& p) {
  const Eigen::ArrayXd inv2 = 1.0 / (p.length_scales.array() * p.length_scales.array());
  const Vector10d minv2r = ((z - zp).array() * inv2).matrix();
  Matrix10d H = inv2.matrix().asDiagonal();
  H -= minv2r * minv2r.transpose();
  return H * kernel(z, zp, p);
}

struct GpDataset {
  Eigen::Matrix<double, Eigen::Dynamic, kStateDim> Z;  // one row per sample
  Eigen::Matrix<double, Eigen::Dynamic, 3> Y;          // measured disturbance, m/s^2
  int size() const { return static_cast<int>(Z.rows()); }
};

inline const std::vector<std::string>& dataset_csv_header() {
  static const std::vector<std::string> h = {"px", "py", "pz", "vx",     "vy",     "vz",    "ax",
                                             "ay", "az", "psi", "dhat_x", "dhat_y", "dhat_z"};
  return h;
}

inline void save_dataset(const std::string& path, const GpDataset& ds) {
  std::vector<std::vector<double>> rows;
  rows.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    std::vector<double> row(13);
    for (int j = 0; j < kStateDim; ++j) row[j] = ds.Z(i, j);
    for (int j = 0; j < 3; ++j) row[kStateDim + j] = ds.Y(i, j);
    rows.push_back(std::move(row));
  }
  csv::write_file(path, dataset_csv_header(), rows);
}

inline GpDataset load_dataset(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  if (t.header != dataset_csv_header())
    throw std::runtime_error("dataset: unexpected CSV header in " + path);
  GpDataset ds;
  ds.Z.resize(t.rows.size(), kStateDim);
  ds.Y.resize(t.rows.size(), 3);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (int j = 0; j < kStateDim; ++j) ds.Z(i, j) = t.rows[i][j];
    for (int j = 0; j < 3; ++j) ds.Y(i, j) = t.rows[i][kStateDim + j];
  }
  return ds;
}

// One axis: cached Cholesky of K = [k(z_i,z_j)] + sigma_omega2 I and the
// weight vector alpha = K^-1 y.
struct GpAxisModel {
  Eigen::Matrix<double, Eigen::Dynamic, kStateDim> Z;
  Eigen::VectorXd y;
  SeKernelParams params;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;

  int count() const { return static_cast<int>(Z.rows()); }

  Eigen::VectorXd kvec(const Vector10d& z) const {
    Eigen::VectorXd k(count());
    for (int i = 0; i < count(); ++i) k(i) = kernel(z, Z.row(i).transpose(), params);
    return k;
  }
};

struct GpModel {
  std::array<GpAxisModel, 3> axis;

  // Prior-only model: no data, predictions fall back to the kernel prior.
  static GpModel empty(const SeKernelParams& p) {
    GpModel m;
    for (auto& ax : m.axis) {
      ax.Z.resize(0, kStateDim);
      ax.y.resize(0);
      ax.params = p;
    }
    return m;
  }
};

inline GpAxisModel fit_axis(const Eigen::Matrix<double, Eigen::Dynamic, kStateDim>& Z,
                            const Eigen::VectorXd& y, const SeKernelParams& params) {
  params.validate();
  GpAxisModel m;
  m.Z = Z;
  m.y = y;
  m.params = params;
  const int n = m.count();
  Eigen::MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double kij = kernel(Z.row(i).transpose(), Z.row(j).transpose(), params);
      K(i, j) = kij;
      K(j, i) = kij;
    }
    K(i, i) += params.sigma_omega2;
  }
  m.llt.compute(K);
  if (m.llt.info() != Eigen::Success)
    throw std::runtime_error("gp: kernel matrix not PD (duplicate inputs with zero noise?)");
  m.alpha = m.llt.solve(y);
  return m;
}

inline GpModel fit(const GpDataset& ds, const SeKernelParams& params) {
  if (ds.size() < 1) throw std::invalid_argument("gp: fit requires at least one sample");
  GpModel m;
  for (int ax = 0; ax < 3; ++ax) m.axis[ax] = fit_axis(ds.Z, ds.Y.col(ax), params);
  return m;
}

struct GpPrediction {
  Eigen::Vector3d mean;
  Eigen::Vector3d var;
};

inline GpPrediction predict(const GpModel& m, const Vector10d& z) {
  GpPrediction out;
  for (int ax = 0; ax < 3; ++ax) {
    const GpAxisModel& a = m.axis[ax];
    if (a.count() == 0) {
      out.mean(ax) = 0.0;
      out.var(ax) = a.params.sigma_eta2;
      continue;
    }
    const Eigen::VectorXd k = a.kvec(z);
    out.mean(ax) = k.dot(a.alpha);
    out.var(ax) = a.params.sigma_eta2 - k.dot(a.llt.solve(k));
  }
  return out;
}

// Linearization of the GP posterior about z^r. With zbar = [1, z - z^r]:
//   mean      mu_tilde(z)    = mu_bar' zbar            (affine in z)
//   variance  sigma2_tilde(z) = zbar' V zbar = ||L' zbar||^2
// V is symmetrized and eigenvalue-clipped at zero before the Cholesky factor
// L is taken; the block formula can go slightly indefinite in floating point.
struct LinGpStage {
  FlatState zr = FlatState::Zero();
  std::array<Vector11d, 3> mu_bar{Vector11d::Zero(), Vector11d::Zero(), Vector11d::Zero()};
  std::array<Matrix11d, 3> L_bar{Matrix11d::Zero(), Matrix11d::Zero(), Matrix11d::Zero()};

  static LinGpStage zero(const FlatState& zr) {
    LinGpStage s;
    s.zr = zr;
    return s;
  }

  Vector11d zbar(const FlatState& z) const {
    Vector11d v;
    v(0) = 1.0;
    v.tail<kStateDim>() = z - zr;
    return v;
  }

  double mu_tilde(int ax, const FlatState& z) const { return mu_bar[ax].dot(zbar(z)); }
  double var_tilde(int ax, const FlatState& z) const {
    return (L_bar[ax].transpose() * zbar(z)).squaredNorm();
  }
  Eigen::Vector3d mean_at(const FlatState& z) const {
    return {mu_tilde(0, z), mu_tilde(1, z), mu_tilde(2, z)};
  }
  // Gradient of the affine mean w.r.t. z (constant).
  Vector10d mu_grad(int ax) const { return mu_bar[ax].tail<kStateDim>(); }
};

inline constexpr double kCovClipJitter = 1e-12;

inline LinGpStage linearize(const GpModel& m, const FlatState& zr) {
  LinGpStage s;
  s.zr = zr;
  for (int ax = 0; ax < 3; ++ax) {
    const GpAxisModel& a = m.axis[ax];
    const int n = a.count();

    // Prior covariance of [f(z^r); grad f(z^r)]; the cross block vanishes for
    // the SE kernel at zero offset.
    Matrix11d V = Matrix11d::Zero();
    V(0, 0) = a.params.sigma_eta2;
    V.bottomRightCorner<kStateDim, kStateDim>() = kernel_hess(zr, zr, a.params);

    if (n > 0) {
      Eigen::MatrixXd Qr(11, n);
      for (int i = 0; i < n; ++i) {
        const Vector10d zi = a.Z.row(i).transpose();
        Qr(0, i) = kernel(zr, zi, a.params);
        Qr.col(i).tail<kStateDim>() = kernel_grad1(zr, zi, a.params);
      }
      s.mu_bar[ax] = Qr * a.alpha;
      V -= Qr * a.llt.solve(Qr.transpose());
    }

    V = 0.5 * (V + V.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix11d> es(V);
    if (es.info() != Eigen::Success) throw std::runtime_error("linearize: eigendecomposition failed");
    const Vector11d lam = es.eigenvalues().cwiseMax(0.0);
    Matrix11d Vp = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    Vp += kCovClipJitter * Matrix11d::Identity();
    Eigen::LLT<Matrix11d> llt(Vp);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("linearize: covariance factorization breakdown");
    s.L_bar[ax] = llt.matrixL();
  }
  return s;
}

// Log marginal likelihood of one fitted axis; utility for the optional
// hyperparameter grid search (not used by the default pipeline).
inline double log_marginal_likelihood(const GpAxisModel& a) {
  const int n = a.count();
  if (n == 0) return 0.0;
  const Eigen::MatrixXd L = a.llt.matrixL();
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(L(i, i));
  return -0.5 * a.y.dot(a.alpha) - logdet - 0.5 * n * std::log(2.0 * M_PI);
}

inline SeKernelParams grid_search_hyperparams(const GpDataset& ds,
                                              const std::vector<SeKernelParams>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("grid search: no candidates");
  double best = -std::numeric_limits<double>::infinity();
  SeKernelParams best_p = candidates.front();
  for (const auto& p : candidates) {
    double lml = 0.0;
    for (int ax = 0; ax < 3; ++ax) lml += log_marginal_likelihood(fit_axis(ds.Z, ds.Y.col(ax), p));
    if (lml > best) {
      best = lml;
      best_p = p;
    }
  }
  return best_p;
}

}  // namespace lbmpc
