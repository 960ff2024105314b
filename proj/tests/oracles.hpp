#pragma once

// Reference computations used only by the tests. Each one is written directly from
// its textbook definition and shares no code path with include/gpmm.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double se(double variance, double lengthscale, double x, double x2) {
  return variance * std::exp(-0.5 * (x - x2) * (x - x2) / (lengthscale * lengthscale));
}

struct GpResult {
  VectorXd mean;
  VectorXd variance;
  double nll;
};

/// Textbook GP regression with an SE kernel and one noise variance (explicit inverse on purpose).
inline GpResult gp_regression(double variance, double lengthscale, double noise, const VectorXd& x, const VectorXd& y,
                              const VectorXd& xs) {
  const auto n = x.size();
  MatrixXd k(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) k(a, b) = se(variance, lengthscale, x[a], x[b]) + (a == b ? noise : 0.0);
  MatrixXd ks(xs.size(), n);
  for (int q = 0; q < xs.size(); ++q)
    for (int b = 0; b < n; ++b) ks(q, b) = se(variance, lengthscale, xs[q], x[b]);
  const MatrixXd kinv = k.inverse();
  GpResult r;
  r.mean = ks * kinv * y;
  r.variance = VectorXd(xs.size());
  for (int q = 0; q < xs.size(); ++q) r.variance[q] = variance - ks.row(q) * kinv * ks.row(q).transpose();
  r.nll = 0.5 * y.dot(kinv * y) + 0.5 * std::log(k.determinant()) + 0.5 * n * std::log(2.0 * std::numbers::pi);
  return r;
}

/// Ridge regression for y = W^T f: argmin |W^T f - y|^2 + lambda |f|^2, via the L x L normal equations.
inline VectorXd ridge(const MatrixXd& w, const VectorXd& y, double lambda) {
  const MatrixXd a = w * w.transpose() + lambda * MatrixXd::Identity(w.rows(), w.rows());
  return a.fullPivLu().solve(w * y);
}

/// Central differences with step h_k = rel * max(1, |theta_k|).
inline VectorXd central_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& theta,
                                   double rel = 1e-5) {
  VectorXd g(theta.size());
  for (int k = 0; k < theta.size(); ++k) {
    const double h = rel * std::max(1.0, std::abs(theta[k]));
    VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    g[k] = (f(tp) - f(tm)) / (2.0 * h);
  }
  return g;
}

/// Sample covariance of the rows of `draws` (n x d), with the standard error of each
/// entry under a Gaussian model: sqrt((S_aa S_bb + S_ab^2) / n).
struct Covariance {
  MatrixXd estimate;
  MatrixXd standard_error;
};

inline Covariance sample_covariance(const MatrixXd& draws) {
  const double n = static_cast<double>(draws.rows());
  const VectorXd mean = draws.colwise().mean();
  const MatrixXd centered = draws.rowwise() - mean.transpose();
  Covariance c;
  c.estimate = centered.transpose() * centered / (n - 1.0);
  c.standard_error = MatrixXd(c.estimate.rows(), c.estimate.cols());
  for (int a = 0; a < c.estimate.rows(); ++a)
    for (int b = 0; b < c.estimate.cols(); ++b)
      c.standard_error(a, b) =
          std::sqrt((c.estimate(a, a) * c.estimate(b, b) + c.estimate(a, b) * c.estimate(a, b)) / n);
  return c;
}

/// Direct O(G^2) DFT power at bin k of the mean-removed signal.
inline double dft_power(const VectorXd& x, int k) {
  const double mean = x.mean();
  double re = 0.0, im = 0.0;
  const auto g = static_cast<double>(x.size());
  for (int t = 0; t < x.size(); ++t) {
    const double ang = -2.0 * std::numbers::pi * k * t / g;
    re += (x[t] - mean) * std::cos(ang);
    im += (x[t] - mean) * std::sin(ang);
  }
  return re * re + im * im;
}

}  // namespace oracle
