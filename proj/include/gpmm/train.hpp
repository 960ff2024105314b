#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpmm/errors.hpp"
#include "gpmm/kernels.hpp"
#include "gpmm/model.hpp"

namespace gpmm {

/// Unconstrained preimage of a WeightSpec.
///
/// Shared mode: one row of ceil(M/2) entries ordered outermost-first, so entry k
/// drives stencil positions k and M-1-k (the centre of an odd stencil is entry
/// (M-1)/2 and is not mirrored). Per-observation mode: N x M, one row per observation.
struct RawWeights {
  WeightSpec::Mode mode = WeightSpec::Mode::shared;
  MatrixXd values;
};

inline Index raw_stencil_size(Index m) { return (m + 1) / 2; }

/// Index into the shared raw vector that drives stencil position j.
inline Index mirror_index(Index j, Index m) { return std::min(j, m - 1 - j); }

/// Square, mirror (shared mode only), normalize to unit sum.
inline WeightSpec weight_transform(const RawWeights& raw, Index m) {
  if (m < 1) throw DomainError("weight_transform: M must be >= 1");
  if (!raw.values.allFinite()) throw DomainError("weight_transform: raw weights must be finite");
  if (raw.mode == WeightSpec::Mode::shared) {
    if (raw.values.rows() != 1 || raw.values.cols() != raw_stencil_size(m))
      throw DomainError("weight_transform: shared raw weights need ceil(M/2) = " +
                        std::to_string(raw_stencil_size(m)) + " entries");
    VectorXd w(m);
    for (Index j = 0; j < m; ++j) {
      const double r = raw.values(0, mirror_index(j, m));
      w[j] = r * r;
    }
    const double total = w.sum();
    if (!(total > 0.0)) throw DomainError("weight_transform: all-zero raw weights");
    w /= total;
    // Exact mirror after division keeps the stencil bitwise symmetric.
    for (Index j = 0; j < m / 2; ++j) w[m - 1 - j] = w[j];
    return WeightSpec::shared(w);
  }
  if (raw.values.cols() != m) throw DomainError("weight_transform: per-observation raw weights need M columns");
  MatrixXd w = raw.values.array().square().matrix();
  for (Index i = 0; i < w.rows(); ++i) {
    const double total = w.row(i).sum();
    if (!(total > 0.0)) throw DomainError("weight_transform: all-zero raw weights for observation " + std::to_string(i));
    w.row(i) /= total;
  }
  return WeightSpec::per_observation(w);
}

/// Canonical raw preimage: element-wise square root of the weights.
inline RawWeights raw_preimage(const WeightSpec& w) {
  if ((w.matrix().array() < 0.0).any()) throw DomainError("raw_preimage: negative weights have no preimage");
  RawWeights raw{w.mode(), {}};
  if (w.mode() == WeightSpec::Mode::shared) {
    raw.values = w.matrix().leftCols(raw_stencil_size(w.m())).array().sqrt().matrix();
  } else {
    raw.values = w.matrix().array().sqrt().matrix();
  }
  return raw;
}

/// Where each unconstrained coordinate lives in the optimizer's parameter vector:
/// [log kernel params | log sigma_eps^2 | log sigma_eta^2 | raw weights (row-major)].
/// With fixed weights the raw block is absent.
class ParameterLayout {
 public:
  ParameterLayout(Kernel family, WeightSpec::Mode mode, Index n, Index m, std::optional<WeightSpec> fixed = {})
      : family_(std::move(family)), mode_(mode), n_(n), m_(m), fixed_(std::move(fixed)) {
    if (fixed_) {
      fixed_->check_shape(n_, m_);
      mode_ = fixed_->mode();
    }
  }

  [[nodiscard]] Index kernel_size() const { return num_params(family_); }
  [[nodiscard]] Index measurement_noise_index() const { return kernel_size(); }
  [[nodiscard]] Index observation_noise_index() const { return kernel_size() + 1; }
  [[nodiscard]] Index weight_offset() const { return kernel_size() + 2; }
  [[nodiscard]] Index weight_rows() const { return mode_ == WeightSpec::Mode::shared ? 1 : n_; }
  [[nodiscard]] Index weight_cols() const { return mode_ == WeightSpec::Mode::shared ? raw_stencil_size(m_) : m_; }
  [[nodiscard]] Index weight_size() const { return fixed_ ? 0 : weight_rows() * weight_cols(); }
  [[nodiscard]] Index size() const { return weight_offset() + weight_size(); }
  [[nodiscard]] bool learns_weights() const { return !fixed_; }
  [[nodiscard]] WeightSpec::Mode mode() const { return mode_; }
  [[nodiscard]] const Kernel& family() const { return family_; }

  [[nodiscard]] VectorXd pack(const GpmmModel& model, const RawWeights& raw) const {
    VectorXd theta(size());
    theta.head(kernel_size()) = log_params(model.kernel);
    theta[measurement_noise_index()] = std::log(model.measurement_noise);
    theta[observation_noise_index()] = std::log(model.observation_noise);
    if (!fixed_) {
      if (raw.values.rows() != weight_rows() || raw.values.cols() != weight_cols())
        throw DomainError("ParameterLayout::pack: raw weight shape mismatch");
      for (Index r = 0; r < weight_rows(); ++r)
        for (Index c = 0; c < weight_cols(); ++c) theta[weight_offset() + r * weight_cols() + c] = raw.values(r, c);
    }
    return theta;
  }

  /// Raw weight block of theta; empty when the weights are fixed.
  [[nodiscard]] RawWeights raw(const VectorXd& theta) const {
    if (fixed_) return RawWeights{mode_, MatrixXd()};
    RawWeights out{mode_, MatrixXd(weight_rows(), weight_cols())};
    for (Index r = 0; r < weight_rows(); ++r)
      for (Index c = 0; c < weight_cols(); ++c) out.values(r, c) = theta[weight_offset() + r * weight_cols() + c];
    return out;
  }

  [[nodiscard]] GpmmModel unpack(const VectorXd& theta, const JitterPolicy& jitter = {}) const {
    if (theta.size() != size()) throw DomainError("ParameterLayout::unpack: wrong parameter count");
    GpmmModel model;
    model.kernel = with_log_params(family_, {theta.data(), static_cast<std::size_t>(kernel_size())});
    model.measurement_noise = std::exp(theta[measurement_noise_index()]);
    model.observation_noise = std::exp(theta[observation_noise_index()]);
    model.weights = fixed_ ? *fixed_ : weight_transform(raw(theta), m_);
    model.jitter = jitter;
    return model;
  }

 private:
  Kernel family_;
  WeightSpec::Mode mode_;
  Index n_;
  Index m_;
  std::optional<WeightSpec> fixed_;
};

namespace detail {

/// dNLL/dw_{i,j} for every observation i and stencil position j (N x M):
/// (A B Q)(u(i,j), i).
inline MatrixXd weight_gradient(const ObservationSolver& solver, const MatrixXd& q) {
  const auto& of = solver.locations().of;
  const MatrixXd abq = solver.measurement_times_mixing() * q;
  MatrixXd grad(of.rows(), of.cols());
  for (Index i = 0; i < of.rows(); ++i)
    for (Index j = 0; j < of.cols(); ++j) grad(i, j) = abq(of(i, j), i);
  return grad;
}

/// Pull a gradient on the weights back through weight_transform.
inline MatrixXd raw_weight_gradient(const MatrixXd& grad_w, const RawWeights& raw, const WeightSpec& w) {
  const Index m = w.m();
  if (raw.mode == WeightSpec::Mode::shared) {
    const VectorXd g = grad_w.colwise().sum().transpose();
    const VectorXd stencil = w.row(0).transpose();
    double total = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double r = raw.values(0, mirror_index(j, m));
      total += r * r;
    }
    const double mean_g = g.dot(stencil);
    MatrixXd out = MatrixXd::Zero(1, raw.values.cols());
    for (Index l = 0; l < m; ++l) {
      const Index k = mirror_index(l, m);
      out(0, k) += 2.0 * raw.values(0, k) * (g[l] - mean_g) / total;
    }
    return out;
  }
  MatrixXd out(raw.values.rows(), m);
  for (Index i = 0; i < raw.values.rows(); ++i) {
    const double total = raw.values.row(i).squaredNorm();
    const double mean_g = grad_w.row(i).dot(w.row(i));
    for (Index j = 0; j < m; ++j) out(i, j) = 2.0 * raw.values(i, j) * (grad_w(i, j) - mean_g) / total;
  }
  return out;
}

}  // namespace detail

/// Analytic gradient of the NLL over the layout's unconstrained coordinates, using
/// dNLL = 0.5 tr((K_y^{-1} - alpha alpha^T) dK_y).
inline VectorXd nll_gradient(const ObservationSolver& solver, const ParameterLayout& layout, const RawWeights& raw) {
  const GpmmModel& model = solver.model();
  const Index n = solver.observations().n();
  const VectorXd& unique = solver.locations().unique;
  const Index u = unique.size();
  const VectorXd& alpha = solver.alpha();
  const MatrixXd& b = solver.mixing();

  const MatrixXd q = solver.factor().solve(MatrixXd::Identity(n, n)) - alpha * alpha.transpose();
  // dK_y = B^T dA B, so 0.5 tr(Q dK_y) = 0.5 sum_ab P_ab dA_ab with P = B Q B^T.
  const MatrixXd p = b * q * b.transpose();

  VectorXd grad = VectorXd::Zero(layout.size());
  const Index nk = layout.kernel_size();
  std::vector<double> dk(static_cast<std::size_t>(nk));
  VectorXd kernel_grad = VectorXd::Zero(nk);
  for (Index c = 0; c < u; ++c) {
    for (Index r = 0; r <= c; ++r) {
      const double w = r == c ? p(r, c) : p(r, c) + p(c, r);
      if (w == 0.0) continue;
      eval_log_gradient(model.kernel, unique[r], unique[c], dk);
      for (Index k = 0; k < nk; ++k) kernel_grad[k] += w * dk[static_cast<std::size_t>(k)];
    }
  }
  grad.head(nk) = 0.5 * kernel_grad;
  grad[layout.measurement_noise_index()] = 0.5 * p.trace() * model.measurement_noise;
  grad[layout.observation_noise_index()] = 0.5 * q.trace() * model.observation_noise;

  if (layout.learns_weights()) {
    const MatrixXd gw = detail::weight_gradient(solver, q);
    const MatrixXd graw = detail::raw_weight_gradient(gw, raw, model.weights);
    for (Index r = 0; r < graw.rows(); ++r)
      for (Index c = 0; c < graw.cols(); ++c) grad[layout.weight_offset() + r * graw.cols() + c] = graw(r, c);
  }
  return grad;
}

/// Layout used by nll_gradient(model, obs): learns weights in the model's own mode.
inline ParameterLayout default_layout(const GpmmModel& model, const ObservationSet& obs) {
  return ParameterLayout(model.kernel, model.weights.mode(), obs.n(), obs.m());
}

/// Gradient of the NLL over [log kernel params, log sigma_eps^2, log sigma_eta^2, raw weights],
/// with the raw weights taken at their canonical preimage sqrt(w).
inline VectorXd nll_gradient(const GpmmModel& model, const ObservationSet& obs) {
  const ObservationSolver solver(model, obs);
  return nll_gradient(solver, default_layout(model, obs), raw_preimage(model.weights));
}

// ---------------------------------------------------------------------------

enum class GradientMode { analytic, finite_difference };

struct FitConfig {
  int max_iterations = 300;
  double gradient_tolerance = 1e-5;
  int restarts = 3;
  std::uint64_t seed = 0;
  double fd_step = 1e-5;
  WeightSpec::Mode weight_mode = WeightSpec::Mode::shared;
  std::optional<WeightSpec> fixed_weights;
  GradientMode gradient = GradientMode::analytic;
  /// Starting point for restart 0 instead of the data-driven initialization.
  std::optional<GpmmModel> warm_start;
  bool parallel_restarts = false;
  JitterPolicy jitter;

  void validate() const {
    if (max_iterations < 1) throw DomainError("fit: max_iterations must be >= 1");
    if (restarts < 1) throw DomainError("fit: restarts must be >= 1");
    if (!(fd_step > 0.0)) throw DomainError("fit: finite-difference step must be > 0");
    if (!(gradient_tolerance >= 0.0)) throw DomainError("fit: gradient tolerance must be >= 0");
  }
};

struct FitResult {
  GpmmModel model;
  double nll = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  std::vector<double> restart_nlls;
  /// sum_j w_j^2 sigma_eps^2 + sigma_eta^2, averaged over observations in per-observation mode.
  double identified_noise = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  int best_restart = 0;
};

/// The combination of the two noise variances the data can identify when all
/// observations share one stencil and no locations coincide.
inline double identified_noise(const GpmmModel& model, Index n) {
  const MatrixXd& w = model.weights.matrix();
  const Index rows = model.weights.mode() == WeightSpec::Mode::shared ? 1 : std::max<Index>(1, std::min(n, w.rows()));
  double total = 0.0;
  for (Index i = 0; i < rows; ++i) total += w.row(i).squaredNorm();
  return model.measurement_noise * total / static_cast<double>(rows) + model.observation_noise;
}

namespace detail {

struct Evaluation {
  double value = std::numeric_limits<double>::infinity();
  std::optional<ObservationSolver> solver;
  bool ok = false;
};

inline Evaluation evaluate(const ParameterLayout& layout, const ObservationSet& obs, const VectorXd& theta,
                           const FitConfig& config) {
  Evaluation out;
  if (!theta.allFinite()) return out;
  try {
    out.solver.emplace(layout.unpack(theta, config.jitter), obs);
    out.value = out.solver->negative_log_likelihood();
    out.ok = std::isfinite(out.value);
  } catch (const NumericalError&) {
    out.ok = false;
  } catch (const DomainError&) {
    out.ok = false;
  }
  return out;
}

inline std::optional<VectorXd> gradient_of(const Evaluation& at, const ParameterLayout& layout,
                                           const ObservationSet& obs, const VectorXd& theta,
                                           const FitConfig& config) {
  VectorXd grad;
  try {
    if (config.gradient == GradientMode::analytic) {
      grad = nll_gradient(*at.solver, layout, layout.raw(theta));
    } else {
      grad.resize(theta.size());
      for (Index k = 0; k < theta.size(); ++k) {
        const double h = config.fd_step * std::max(1.0, std::abs(theta[k]));
        VectorXd tp = theta;
        VectorXd tm = theta;
        tp[k] += h;
        tm[k] -= h;
        const double fp = ObservationSolver(layout.unpack(tp, config.jitter), obs).negative_log_likelihood();
        const double fm = ObservationSolver(layout.unpack(tm, config.jitter), obs).negative_log_likelihood();
        grad[k] = (fp - fm) / (2.0 * h);
      }
    }
  } catch (const NumericalError&) {
    return std::nullopt;
  } catch (const DomainError&) {
    return std::nullopt;
  }
  if (!grad.allFinite()) return std::nullopt;
  return grad;
}

struct RestartOutcome {
  VectorXd theta;
  double nll = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  bool ok = false;
};

/// Gradient descent with Armijo backtracking. Only steps that decrease the NLL are taken.
inline RestartOutcome descend(const ParameterLayout& layout, const ObservationSet& obs, VectorXd theta,
                              const FitConfig& config) {
  RestartOutcome out;
  Evaluation current = evaluate(layout, obs, theta, config);
  if (!current.ok) return out;
  std::optional<VectorXd> grad = gradient_of(current, layout, obs, theta, config);
  if (!grad) return out;
  out.ok = true;
  out.trace.push_back(current.value);

  constexpr double armijo = 1e-4;
  constexpr double min_step = 1e-14;
  double step = 1.0 / std::max(1.0, grad->norm());

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    if (grad->lpNorm<Eigen::Infinity>() <= config.gradient_tolerance) {
      out.converged = true;
      break;
    }
    const double gsq = grad->squaredNorm();
    bool accepted = false;
    Evaluation trial;
    VectorXd candidate;
    while (step >= min_step) {
      candidate = theta - step * *grad;
      trial = evaluate(layout, obs, candidate, config);
      if (trial.ok && trial.value <= current.value - armijo * step * gsq) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    // No descent step at floating-point resolution: stalled short of the tolerance.
    if (!accepted) break;
    std::optional<VectorXd> next_grad = gradient_of(trial, layout, obs, candidate, config);
    if (!next_grad) break;
    // Barzilai-Borwein trial step for the next iteration; backtracking keeps descent monotone.
    const VectorXd ds = candidate - theta;
    const VectorXd dg = *next_grad - *grad;
    const double curvature = ds.dot(dg);
    step = curvature > 0.0 ? ds.squaredNorm() / curvature : 2.0 * step;
    theta = std::move(candidate);
    current = std::move(trial);
    grad = std::move(next_grad);
    out.trace.push_back(current.value);
    out.iterations = iter + 1;
  }
  out.gradient_norm = grad->lpNorm<Eigen::Infinity>();
  out.theta = std::move(theta);
  out.nll = current.value;
  return out;
}

/// Data-driven starting hyperparameters for one kernel family. The lengthscale is
/// picked by scanning a log grid between the smallest location gap and the span,
/// scoring each candidate by its NLL under `weights`.
inline GpmmModel initial_model(KernelKind kind, const ObservationSet& obs, const WeightSpec& weights,
                               const JitterPolicy& jitter) {
  const double mean = obs.values.mean();
  double variance = (obs.values.array() - mean).square().mean();
  if (!(variance > 0.0)) variance = 1.0;

  GpmmModel model;
  model.measurement_noise = 0.1 * variance;
  model.observation_noise = 0.1 * variance;
  model.weights = weights;
  model.jitter = jitter;
  if (kind == KernelKind::white) {
    model.kernel = WhiteParams{variance};
    return model;
  }

  const VectorXd flat = obs.flat_locations();
  std::vector<double> xs(flat.begin(), flat.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const double span = xs.back() - xs.front();
  double gap = span;
  for (std::size_t k = 1; k < xs.size(); ++k) gap = std::min(gap, xs[k] - xs[k - 1]);
  if (!(span > 0.0)) {
    model.kernel = kind == KernelKind::se ? Kernel{SeParams{variance, 1.0}} : Kernel{NnParams{variance, 1.0, 1.0}};
    return model;
  }

  auto with_lengthscale = [&](double ell) -> Kernel {
    if (kind == KernelKind::se) return SeParams{variance, ell};
    return NnParams{variance, 1.0, 1.0 / (ell * ell)};
  };
  constexpr int candidates = 16;
  double best_nll = std::numeric_limits<double>::infinity();
  double best_ell = std::sqrt(gap * span);
  for (int c = 0; c < candidates; ++c) {
    const double ell = gap * std::pow(span / gap, static_cast<double>(c) / (candidates - 1));
    model.kernel = with_lengthscale(ell);
    try {
      const double nll = ObservationSolver(model, obs).negative_log_likelihood();
      if (nll < best_nll) {
        best_nll = nll;
        best_ell = ell;
      }
    } catch (const NumericalError&) {
    }
  }
  model.kernel = with_lengthscale(best_ell);
  return model;
}

}  // namespace detail

/// Learn kernel hyperparameters, both noise variances and (unless fixed) the mixing
/// weights by minimizing the NLL. Best of `restarts` gradient-descent runs.
inline FitResult fit(const ObservationSet& obs, KernelKind kind, const FitConfig& config) {
  config.validate();
  obs.validate();
  if (obs.n() < 2) throw DomainError("fit: need at least two observations");

  if (config.warm_start && kind_of(config.warm_start->kernel) != kind)
    throw DomainError("fit: warm start has a different kernel family");
  WeightSpec uniform = config.weight_mode == WeightSpec::Mode::shared
                           ? WeightSpec::shared(VectorXd::Constant(obs.m(), 1.0 / static_cast<double>(obs.m())))
                           : WeightSpec::per_observation(
                                 MatrixXd::Constant(obs.n(), obs.m(), 1.0 / static_cast<double>(obs.m())));
  const GpmmModel init = config.warm_start
                             ? *config.warm_start
                             : detail::initial_model(kind, obs, config.fixed_weights.value_or(uniform), config.jitter);
  const ParameterLayout layout(init.kernel, config.weight_mode, obs.n(), obs.m(), config.fixed_weights);

  // Each restart gets its own generator so restarts are independent of execution order.
  auto starting_point = [&](int restart, int attempt) {
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(restart) * 1000003ULL +
                        static_cast<std::uint64_t>(attempt));
    std::uniform_real_distribution<double> raw_draw(0.5, 1.5);
    std::uniform_real_distribution<double> perturb(-0.5, 0.5);
    RawWeights raw{layout.mode(), MatrixXd(layout.weight_rows(), layout.weight_cols())};
    if (config.warm_start && restart == 0 && attempt == 0 && layout.learns_weights()) {
      raw = raw_preimage(config.warm_start->weights);
    } else {
      for (Index r = 0; r < raw.values.rows(); ++r)
        for (Index c = 0; c < raw.values.cols(); ++c) raw.values(r, c) = raw_draw(rng);
    }
    GpmmModel start = init;
    if (!layout.learns_weights()) start.weights = *config.fixed_weights;
    VectorXd theta = layout.pack(start, raw);
    if (restart > 0 || attempt > 0)
      for (Index k = 0; k < layout.weight_offset(); ++k) theta[k] += perturb(rng);
    return theta;
  };

  auto run_restart = [&](int restart) {
    // Non-finite starting NLL: re-draw, at most `restarts` attempts per restart.
    for (int attempt = 0; attempt < config.restarts; ++attempt) {
      detail::RestartOutcome outcome = detail::descend(layout, obs, starting_point(restart, attempt), config);
      if (outcome.ok) return outcome;
    }
    return detail::RestartOutcome{};
  };

  std::vector<detail::RestartOutcome> outcomes(static_cast<std::size_t>(config.restarts));
  if (config.parallel_restarts && config.restarts > 1) {
    std::vector<std::future<detail::RestartOutcome>> futures;
    for (int r = 0; r < config.restarts; ++r) futures.push_back(std::async(std::launch::async, run_restart, r));
    for (int r = 0; r < config.restarts; ++r) outcomes[static_cast<std::size_t>(r)] = futures[static_cast<std::size_t>(r)].get();
  } else {
    for (int r = 0; r < config.restarts; ++r) outcomes[static_cast<std::size_t>(r)] = run_restart(r);
  }

  FitResult result;
  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    const auto& o = outcomes[static_cast<std::size_t>(r)];
    result.restart_nlls.push_back(o.ok ? o.nll : std::numeric_limits<double>::infinity());
    if (o.ok && (best < 0 || o.nll < outcomes[static_cast<std::size_t>(best)].nll)) best = r;
  }
  if (best < 0) throw NumericalError("fit: every restart failed to factorize K_y");

  const auto& winner = outcomes[static_cast<std::size_t>(best)];
  result.model = layout.unpack(winner.theta, config.jitter);
  result.nll = winner.nll;
  result.trace = winner.trace;
  result.iterations = winner.iterations;
  result.gradient_norm = winner.gradient_norm;
  result.converged = winner.converged;
  result.best_restart = best;
  result.identified_noise = identified_noise(result.model, obs.n());
  return result;
}

}  // namespace gpmm
