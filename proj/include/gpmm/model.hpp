#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gpmm/errors.hpp"
#include "gpmm/kernels.hpp"

namespace gpmm {

/// N observations of M measurements each. locations(i, j) is x_{i,j}; values(i) is y_i.
struct ObservationSet {
  MatrixXd locations;
  VectorXd values;

  [[nodiscard]] Index n() const { return locations.rows(); }
  [[nodiscard]] Index m() const { return locations.cols(); }

  void validate() const {
    if (n() < 1 || m() < 1) throw DomainError("observation set needs N >= 1 and M >= 1");
    if (values.size() != n())
      throw DomainError("observation set: " + std::to_string(values.size()) + " values for " +
                        std::to_string(n()) + " observations");
    if (!locations.allFinite()) throw DomainError("observation set: non-finite measurement location");
    if (!values.allFinite()) throw DomainError("observation set: non-finite observed value");
  }

  /// All x_{i,j} flattened observation-major: index i * M + j.
  [[nodiscard]] VectorXd flat_locations() const {
    VectorXd out(n() * m());
    for (Index i = 0; i < n(); ++i)
      for (Index j = 0; j < m(); ++j) out(i * m() + j) = locations(i, j);
    return out;
  }
};

/// Mixing weights. Shared mode holds a single 1 x M stencil used by every observation;
/// per-observation mode holds an N x M matrix.
class WeightSpec {
 public:
  enum class Mode { shared, per_observation };

  WeightSpec() = default;

  /// Non-negative, unit-sum, symmetric stencil.
  static WeightSpec shared(const VectorXd& stencil) {
    WeightSpec w(Mode::shared, stencil.transpose());
    w.check_constraints();
    return w;
  }

  /// Non-negative rows summing to one.
  static WeightSpec per_observation(const MatrixXd& weights) {
    WeightSpec w(Mode::per_observation, weights);
    w.check_constraints();
    return w;
  }

  /// Arbitrary finite weights. The covariance algebra does not need the simplex
  /// constraints; linear-system bridges use this with a general W.
  static WeightSpec unconstrained(const MatrixXd& weights) {
    if (!weights.allFinite()) throw DomainError("weights must be finite");
    return WeightSpec(Mode::per_observation, weights);
  }

  [[nodiscard]] Mode mode() const { return mode_; }
  [[nodiscard]] Index m() const { return weights_.cols(); }
  [[nodiscard]] const MatrixXd& matrix() const { return weights_; }

  [[nodiscard]] auto row(Index i) const { return weights_.row(mode_ == Mode::shared ? 0 : i); }
  [[nodiscard]] double operator()(Index i, Index j) const {
    return weights_(mode_ == Mode::shared ? 0 : i, j);
  }

  /// Throws unless the weights fit an observation set of the given shape.
  void check_shape(Index n, Index m) const {
    if (weights_.cols() != m)
      throw DomainError("weights have " + std::to_string(weights_.cols()) + " columns but M = " +
                        std::to_string(m));
    if (mode_ == Mode::per_observation && weights_.rows() != n)
      throw DomainError("per-observation weights have " + std::to_string(weights_.rows()) +
                        " rows but N = " + std::to_string(n));
    if (mode_ == Mode::shared && weights_.rows() != 1) throw DomainError("shared stencil must have one row");
  }

  void check_constraints() const {
    if (weights_.size() == 0) throw DomainError("empty weight matrix");
    if (!weights_.allFinite()) throw DomainError("weights must be finite");
    if ((weights_.array() < 0.0).any()) throw DomainError("weights must be non-negative");
    for (Index r = 0; r < weights_.rows(); ++r)
      if (std::abs(weights_.row(r).sum() - 1.0) > 1e-12)
        throw DomainError("weights of each observation must sum to 1");
    if (mode_ == Mode::shared) {
      const Index m = weights_.cols();
      for (Index j = 0; j < m / 2; ++j)
        if (weights_(0, j) != weights_(0, m - 1 - j)) throw DomainError("shared stencil must be symmetric");
    }
  }

 private:
  WeightSpec(Mode mode, MatrixXd weights) : mode_(mode), weights_(std::move(weights)) {}

  Mode mode_ = Mode::shared;
  MatrixXd weights_;
};

/// Diagonal inflation applied to K_y before Cholesky, relative to its mean diagonal.
struct JitterPolicy {
  double initial = 1e-8;
  double max = 1e-4;
  double factor = 10.0;
};

struct GpmmModel {
  Kernel kernel = SeParams{};
  double measurement_noise = 0.0;  // sigma_eps^2
  double observation_noise = 0.0;  // sigma_eta^2
  WeightSpec weights;
  JitterPolicy jitter;

  void validate() const {
    gpmm::validate(kernel);
    if (!(measurement_noise >= 0.0) || !std::isfinite(measurement_noise))
      throw DomainError("measurement noise variance must be finite and >= 0");
    if (!(observation_noise >= 0.0) || !std::isfinite(observation_noise))
      throw DomainError("observation noise variance must be finite and >= 0");
    if (!(jitter.initial >= 0.0) || !(jitter.max >= jitter.initial) || !(jitter.factor > 1.0))
      throw DomainError("invalid jitter policy");
  }

  void validate(const ObservationSet& obs) const {
    validate();
    obs.validate();
    weights.check_shape(obs.n(), obs.m());
  }
};

struct Posterior {
  VectorXd query;
  VectorXd mean;
  VectorXd variance;
};

/// mu_y(x_i) = sum_j w_ij mu_f(x_ij) with mu_f = 0.
inline VectorXd observation_mean(const GpmmModel& model, const ObservationSet& obs) {
  model.validate(obs);
  return VectorXd::Zero(obs.n());
}

namespace detail {

/// Distinct measurement locations (sorted) and, for each observation i and stencil
/// position j, the index of x_ij among them.
struct LocationIndex {
  VectorXd unique;
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> of;  // N x M
};

inline LocationIndex index_locations(const ObservationSet& obs) {
  std::vector<double> xs(obs.locations.data(), obs.locations.data() + obs.locations.size());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  LocationIndex idx;
  idx.unique = Eigen::Map<const VectorXd>(xs.data(), static_cast<Index>(xs.size()));
  idx.of.resize(obs.n(), obs.m());
  for (Index i = 0; i < obs.n(); ++i)
    for (Index j = 0; j < obs.m(); ++j)
      idx.of(i, j) = std::lower_bound(xs.begin(), xs.end(), obs.locations(i, j)) - xs.begin();
  return idx;
}

/// B (U x N): B(u, i) = sum of w_ij over the j with x_ij at unique location u, so that
/// sum_jj' w_ij w_i'j' (k(x_ij, x_i'j') + sigma_eps^2 [x_ij == x_i'j']) = (B^T A B)(i, i')
/// with A = K_f(u, u) + sigma_eps^2 I.
inline MatrixXd mixing_matrix(const LocationIndex& idx, const WeightSpec& w) {
  MatrixXd b = MatrixXd::Zero(idx.unique.size(), idx.of.rows());
  for (Index i = 0; i < idx.of.rows(); ++i)
    for (Index j = 0; j < idx.of.cols(); ++j) b(idx.of(i, j), i) += w(i, j);
  return b;
}

inline MatrixXd measurement_covariance(const GpmmModel& model, const VectorXd& unique) {
  MatrixXd a = gram(model.kernel, unique);
  a.diagonal().array() += model.measurement_noise;
  return a;
}

/// K_y = B^T (A B) + sigma_eta^2 I, exactly symmetric.
inline MatrixXd observation_covariance_from(const MatrixXd& b, const MatrixXd& ab, double observation_noise) {
  MatrixXd ky = b.transpose() * ab;
  ky = 0.5 * (ky + ky.transpose()).eval();
  ky.diagonal().array() += observation_noise;
  return ky;
}

}  // namespace detail

/// K_y of the observation set (no jitter).
inline MatrixXd observation_covariance(const GpmmModel& model, const ObservationSet& obs) {
  model.validate(obs);
  const detail::LocationIndex idx = detail::index_locations(obs);
  const MatrixXd b = detail::mixing_matrix(idx, model.weights);
  const MatrixXd ab = detail::measurement_covariance(model, idx.unique) * b;
  return detail::observation_covariance_from(b, ab, model.observation_noise);
}

/// K_fy(query, x_i) = w_i^T K_f(query, x_i). Q x N.
inline MatrixXd cross_covariance(const GpmmModel& model, const ObservationSet& obs, const VectorXd& query) {
  if (query.size() == 0) throw DomainError("cross_covariance: empty query");
  model.validate(obs);
  const detail::LocationIndex idx = detail::index_locations(obs);
  return gram(model.kernel, query, idx.unique) * detail::mixing_matrix(idx, model.weights);
}

/// Factorized K_y for one (model, observations) pair. Immutable once built; every
/// solve, the NLL, the posterior and the gradient share the same Cholesky factor.
/// Coincident measurement locations are merged, so the kernel is evaluated once per
/// distinct pair of locations.
class ObservationSolver {
 public:
  ObservationSolver(GpmmModel model, ObservationSet obs) : model_(std::move(model)), obs_(std::move(obs)) {
    model_.validate(obs_);
    index_ = detail::index_locations(obs_);
    b_ = detail::mixing_matrix(index_, model_.weights);
    a_ = detail::measurement_covariance(model_, index_.unique);
    ab_ = a_ * b_;
    ky_ = detail::observation_covariance_from(b_, ab_, model_.observation_noise);
    factorize();
    alpha_ = llt_.solve(obs_.values);
  }

  [[nodiscard]] const GpmmModel& model() const { return model_; }
  [[nodiscard]] const ObservationSet& observations() const { return obs_; }
  [[nodiscard]] const detail::LocationIndex& locations() const { return index_; }
  /// Weights accumulated per distinct location (U x N).
  [[nodiscard]] const MatrixXd& mixing() const { return b_; }
  /// K_f + sigma_eps^2 I over the distinct locations.
  [[nodiscard]] const MatrixXd& measurement_covariance() const { return a_; }
  /// measurement_covariance() * mixing().
  [[nodiscard]] const MatrixXd& measurement_times_mixing() const { return ab_; }
  /// K_y without jitter.
  [[nodiscard]] const MatrixXd& covariance() const { return ky_; }
  [[nodiscard]] double jitter() const { return jitter_; }
  [[nodiscard]] const Eigen::LLT<MatrixXd>& factor() const { return llt_; }
  /// K_y^{-1} y.
  [[nodiscard]] const VectorXd& alpha() const { return alpha_; }

  [[nodiscard]] double log_determinant() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  [[nodiscard]] double negative_log_likelihood() const {
    const auto n = static_cast<double>(obs_.n());
    return 0.5 * obs_.values.dot(alpha_) + 0.5 * log_determinant() + 0.5 * n * std::log(2.0 * std::numbers::pi);
  }

  [[nodiscard]] Posterior posterior(const VectorXd& query) const {
    if (query.size() == 0) throw DomainError("posterior: empty query");
    const MatrixXd kfy = gram(model_.kernel, query, index_.unique) * b_;
    Posterior post;
    post.query = query;
    post.mean = kfy * alpha_;
    const MatrixXd half = llt_.matrixL().solve(kfy.transpose());
    post.variance.resize(query.size());
    for (Index q = 0; q < query.size(); ++q) {
      const double prior = eval(model_.kernel, query[q], query[q]);
      post.variance[q] = std::max(0.0, prior - half.col(q).squaredNorm());
    }
    return post;
  }

 private:
  void factorize() {
    const Index n = ky_.rows();
    const double mean_diag = ky_.diagonal().mean();
    const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
    double min_weight_sq = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) min_weight_sq = std::min(min_weight_sq, model_.weights.row(i).squaredNorm());
    const double noise_floor = model_.observation_noise + model_.measurement_noise * min_weight_sq;

    // The first attempt only tops the diagonal noise up to the required floor.
    double required = model_.jitter.initial * scale;
    double added = std::max(0.0, required - noise_floor);
    for (;;) {
      MatrixXd a = ky_;
      a.diagonal().array() += added;
      llt_.compute(a);
      if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite()) {
        jitter_ = added;
        return;
      }
      required = required > 0.0 ? required * model_.jitter.factor : 1e-8 * scale;
      if (required > model_.jitter.max * scale * (1.0 + 1e-9)) {
        std::ostringstream msg;
        msg << "Cholesky factorization of K_y failed (N = " << n << ") after jitter up to " << added
            << " (" << added / scale << " x mean diagonal)";
        throw NumericalError(msg.str());
      }
      added = required;
    }
  }

  GpmmModel model_;
  ObservationSet obs_;
  detail::LocationIndex index_;
  MatrixXd b_;
  MatrixXd a_;
  MatrixXd ab_;
  MatrixXd ky_;
  Eigen::LLT<MatrixXd> llt_;
  VectorXd alpha_;
  double jitter_ = 0.0;
};

/// Posterior mean and variance of f at `query`. An empty observation set gives the prior.
inline Posterior posterior(const GpmmModel& model, const ObservationSet& obs, const VectorXd& query) {
  if (query.size() == 0) throw DomainError("posterior: empty query");
  if (obs.n() == 0) {
    model.validate();
    Posterior prior;
    prior.query = query;
    prior.mean = VectorXd::Zero(query.size());
    prior.variance.resize(query.size());
    for (Index q = 0; q < query.size(); ++q) prior.variance[q] = eval(model.kernel, query[q], query[q]);
    return prior;
  }
  return ObservationSolver(model, obs).posterior(query);
}

/// 0.5 y^T K_y^{-1} y + 0.5 log|K_y| + (N/2) log(2 pi).
inline double negative_log_likelihood(const GpmmModel& model, const ObservationSet& obs) {
  return ObservationSolver(model, obs).negative_log_likelihood();
}

}  // namespace gpmm
