#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <string>

#include "gpmm/errors.hpp"
#include "gpmm/kernels.hpp"
#include "gpmm/model.hpp"

namespace gpmm {

/// y = W^T m + eta, with W the L x N block-diagonal weight matrix (L = M N): column i
/// holds stencil w_i in rows i*M .. i*M+M-1 and is zero elsewhere.
struct StackedSystem {
  MatrixXd w;
  VectorXd y;
  Index n = 0;
  Index m = 0;

  [[nodiscard]] Index l() const { return n * m; }

  void validate() const {
    if (n < 1 || m < 1) throw DomainError("stacked system needs N >= 1 and M >= 1");
    if (w.rows() != l() || w.cols() != n)
      throw DomainError("stacked system: W must be L x N = " + std::to_string(l()) + " x " + std::to_string(n));
    if (y.size() != n) throw DomainError("stacked system: y must have N entries");
    if (!w.allFinite() || !y.allFinite()) throw DomainError("stacked system: non-finite entries");
    for (Index i = 0; i < n; ++i)
      for (Index a = 0; a < l(); ++a)
        if (a / m != i && w(a, i) != 0.0)
          throw DomainError("stacked system: W column " + std::to_string(i) + " has weight outside its block");
  }

  /// Stencil of observation i.
  [[nodiscard]] VectorXd stencil(Index i) const { return w.col(i).segment(i * m, m); }
};

inline StackedSystem stack(const WeightSpec& weights, const VectorXd& y, Index m) {
  StackedSystem sys;
  sys.n = y.size();
  sys.m = m;
  weights.check_shape(sys.n, m);
  sys.w = MatrixXd::Zero(sys.n * m, sys.n);
  for (Index i = 0; i < sys.n; ++i) sys.w.col(i).segment(i * m, m) = weights.row(i).transpose();
  sys.y = y;
  return sys;
}

/// Minimum-norm least-squares solution of W^T m = y, through the SVD of W^T with
/// singular values below 1e-12 * sigma_max treated as zero.
inline VectorXd pseudoinverse_solve(const StackedSystem& sys) {
  sys.validate();
  if (sys.w.isZero(0.0)) throw DomainError("pseudoinverse_solve: W is all zero");
  const Eigen::JacobiSVD<MatrixXd> svd(sys.w.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cutoff = 1e-12 * s[0];
  VectorXd coeffs = svd.matrixU().transpose() * sys.y;
  for (Index k = 0; k < s.size(); ++k) coeffs[k] = s[k] > cutoff ? coeffs[k] / s[k] : 0.0;
  return svd.matrixV() * coeffs;
}

/// Closed-form posterior mean on the grid under a white prior K_f = sigma_f^2 I:
///
///   f = sigma_f^2 / (sigma_eps^2 + sigma_f^2) * W (W^T W + gamma I)^{-1} y,
///   gamma = sigma_eta^2 / (sigma_eps^2 + sigma_f^2).
inline VectorXd gpmm_linear_solution(const StackedSystem& sys, double signal_variance, double measurement_noise,
                                     double observation_noise) {
  sys.validate();
  if (!(signal_variance > 0.0)) throw DomainError("gpmm_linear_solution: sigma_f^2 must be > 0");
  if (!(measurement_noise >= 0.0) || !(observation_noise >= 0.0))
    throw DomainError("gpmm_linear_solution: noise variances must be >= 0");
  const double total = measurement_noise + signal_variance;
  const double gain = signal_variance / total;
  const double ridge = observation_noise / total;

  MatrixXd inner = sys.w.transpose() * sys.w;
  inner.diagonal().array() += ridge;
  const Eigen::LLT<MatrixXd> llt(inner);
  const double largest = inner.diagonal().maxCoeff();
  if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 1e-8 * std::sqrt(largest))
    throw NumericalError("gpmm_linear_solution: W^T W + gamma I is singular (gamma = " + std::to_string(ridge) + ")");
  return gain * (sys.w * llt.solve(sys.y));
}

/// The same estimate obtained by building a GPMM with the white kernel on distinct
/// grid locations 0..L-1 and taking its posterior mean there.
inline VectorXd identity_kernel_bridge(const StackedSystem& sys, double signal_variance, double measurement_noise,
                                       double observation_noise) {
  sys.validate();
  ObservationSet obs;
  obs.locations.resize(sys.n, sys.m);
  MatrixXd weights(sys.n, sys.m);
  for (Index i = 0; i < sys.n; ++i)
    for (Index j = 0; j < sys.m; ++j) {
      obs.locations(i, j) = static_cast<double>(i * sys.m + j);
      weights(i, j) = sys.w(i * sys.m + j, i);
    }
  obs.values = sys.y;

  GpmmModel model;
  model.kernel = WhiteParams{signal_variance};
  model.measurement_noise = measurement_noise;
  model.observation_noise = observation_noise;
  model.weights = WeightSpec::unconstrained(weights);
  model.jitter.initial = 0.0;
  return posterior(model, obs, obs.flat_locations()).mean;
}

}  // namespace gpmm
