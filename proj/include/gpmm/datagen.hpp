#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gpmm/errors.hpp"
#include "gpmm/kernels.hpp"
#include "gpmm/model.hpp"

namespace gpmm {

enum class Provenance { gp_sample, heaviside, csv };

/// Ground-truth signal sampled on a strictly increasing grid.
struct LatentSignal {
  VectorXd grid;
  VectorXd values;
  Provenance provenance = Provenance::csv;

  void validate() const {
    if (grid.size() == 0) throw DomainError("latent signal: empty grid");
    if (values.size() != grid.size()) throw DomainError("latent signal: grid and values differ in length");
    if (!grid.allFinite() || !values.allFinite()) throw DomainError("latent signal: non-finite entries");
    for (Index k = 1; k < grid.size(); ++k)
      if (!(grid[k] > grid[k - 1])) throw DomainError("latent signal: grid must be strictly increasing");
  }

  /// Linear interpolation; exact grid points return the stored value unchanged.
  [[nodiscard]] double at(double x) const {
    if (!(x >= grid[0] && x <= grid[grid.size() - 1]))
      throw DomainError("latent signal: location " + std::to_string(x) + " outside grid [" +
                        std::to_string(grid[0]) + ", " + std::to_string(grid[grid.size() - 1]) + "]");
    const double* begin = grid.data();
    const double* end = begin + grid.size();
    const double* hit = std::lower_bound(begin, end, x);
    const auto k = static_cast<Index>(hit - begin);
    if (*hit == x) return values[k];
    const double t = (x - grid[k - 1]) / (grid[k] - grid[k - 1]);
    return values[k - 1] + t * (values[k] - values[k - 1]);
  }
};

struct SensingConfig {
  WeightSpec stencil;
  Index m = 7;
  double spacing = 1.0;
  VectorXd centers;
  double measurement_noise = 0.0;  // sigma_eps^2
  double observation_noise = 0.0;  // sigma_eta^2
  std::uint64_t seed = 0;

  void validate() const {
    if (m < 1) throw DomainError("sensing: M must be >= 1");
    if (centers.size() < 1) throw DomainError("sensing: need at least one observation center");
    if (!(spacing >= 0.0) || !std::isfinite(spacing)) throw DomainError("sensing: spacing must be finite and >= 0");
    if (!(measurement_noise >= 0.0) || !(observation_noise >= 0.0))
      throw DomainError("sensing: noise variances must be >= 0");
    stencil.check_shape(centers.size(), m);
  }
};

/// x_{i,j} = center_i + (j - (M-1)/2) * spacing, j = 0..M-1.
inline MatrixXd measurement_locations(const SensingConfig& cfg) {
  MatrixXd x(cfg.centers.size(), cfg.m);
  const double mid = 0.5 * static_cast<double>(cfg.m - 1);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < cfg.m; ++j) x(i, j) = cfg.centers[i] + (static_cast<double>(j) - mid) * cfg.spacing;
  return x;
}

/// Symmetric unit-sum triangular stencil, weights proportional to 1, 2, ..., peak, ..., 2, 1.
inline VectorXd triangular_stencil(Index m) {
  if (m < 1) throw DomainError("triangular_stencil: M must be >= 1");
  VectorXd w(m);
  for (Index j = 0; j < m; ++j) w[j] = static_cast<double>(std::min(j + 1, m - j));
  w /= w.sum();
  for (Index j = 0; j < m / 2; ++j) w[m - 1 - j] = w[j];
  return w;
}

/// n evenly spaced points from lo to hi inclusive.
inline VectorXd linspace(double lo, double hi, Index n) {
  if (n < 1) throw DomainError("linspace: need at least one point");
  VectorXd out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (Index k = 0; k < n; ++k) out[k] = lo + step * static_cast<double>(k);
  out[n - 1] = hi;
  return out;
}

/// A draw of the zero-mean GP on `grid`, via Cholesky of the Gram matrix with
/// jitter 1e-8 x mean diagonal escalated x10 up to 1e-4.
inline LatentSignal sample_gp_prior(const Kernel& kernel, const VectorXd& grid, std::uint64_t seed) {
  validate(kernel);
  MatrixXd k = gram(kernel, grid);
  const double scale = std::max(k.diagonal().mean(), std::numeric_limits<double>::min());
  Eigen::LLT<MatrixXd> llt;
  double jitter = 1e-8;
  for (;;) {
    MatrixXd a = k;
    a.diagonal().array() += jitter * scale;
    llt.compute(a);
    if (llt.info() == Eigen::Success) break;
    jitter *= 10.0;
    if (jitter > 1e-4 * (1.0 + 1e-9))
      throw NumericalError("sample_gp_prior: Cholesky failed with jitter up to " + std::to_string(jitter / 10.0 * scale));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  VectorXd z(grid.size());
  for (Index q = 0; q < z.size(); ++q) z[q] = normal(rng);
  LatentSignal out{grid, llt.matrixL() * z, Provenance::gp_sample};
  out.validate();
  return out;
}

/// m_ij = f(x_ij) + eps_ij and y_i = sum_j w_ij m_ij + eta_i. Measurement noise is a
/// function of location: bitwise-equal locations share one eps draw.
inline ObservationSet sense(const LatentSignal& signal, const SensingConfig& cfg) {
  signal.validate();
  cfg.validate();
  ObservationSet obs;
  obs.locations = measurement_locations(cfg);
  obs.values.resize(cfg.centers.size());

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  const double eps_sd = std::sqrt(cfg.measurement_noise);
  const double eta_sd = std::sqrt(cfg.observation_noise);
  std::map<double, double> eps_at;

  for (Index i = 0; i < obs.n(); ++i) {
    double y = 0.0;
    for (Index j = 0; j < cfg.m; ++j) {
      const double x = obs.locations(i, j);
      auto [it, fresh] = eps_at.try_emplace(x, 0.0);
      if (fresh) it->second = eps_sd * normal(rng);
      const double measurement = signal.at(x) + it->second;
      y += cfg.stencil(i, j) * measurement;
    }
    obs.values[i] = y + eta_sd * normal(rng);
  }
  return obs;
}

/// 0 for x < step, 1 for x >= step.
inline LatentSignal heaviside(const VectorXd& grid, double step = 0.0) {
  LatentSignal out{grid, VectorXd(grid.size()), Provenance::heaviside};
  for (Index k = 0; k < grid.size(); ++k) out.values[k] = grid[k] >= step ? 1.0 : 0.0;
  out.validate();
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// One value per line, or "index,value". A non-numeric first line is a header and is skipped;
/// blank lines and lines starting with '#' are ignored. Grid is 0..G-1.
inline LatentSignal load_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, 0, "file", "cannot open");
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::string_view field = view;
    if (const auto comma = view.find(','); comma != std::string_view::npos) field = view.substr(comma + 1);
    double v = 0.0;
    if (!detail::parse_double(field, v)) {
      if (first_content) {
        first_content = false;
        continue;
      }
      throw SchemaError(path, lineno, "value", "cannot parse '" + std::string(field) + "' as a number");
    }
    first_content = false;
    values.push_back(v);
  }
  if (values.empty()) throw SchemaError(path, lineno, "value", "series is empty");
  LatentSignal out;
  out.grid.resize(static_cast<Index>(values.size()));
  out.values.resize(static_cast<Index>(values.size()));
  for (std::size_t k = 0; k < values.size(); ++k) {
    out.grid[static_cast<Index>(k)] = static_cast<double>(k);
    out.values[static_cast<Index>(k)] = values[k];
  }
  out.provenance = Provenance::csv;
  return out;
}

}  // namespace gpmm
