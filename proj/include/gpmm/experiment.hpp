#pragma once

// End-to-end experiments: simulate -> fit -> infer -> baselines -> PSD -> compare,
// driven by one JSON config. Every output is a pure function of the config.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpmm/datagen.hpp"
#include "gpmm/io.hpp"
#include "gpmm/linsys.hpp"
#include "gpmm/model.hpp"
#include "gpmm/spectral.hpp"
#include "gpmm/train.hpp"

namespace gpmm {

struct GridSpec {
  double start = 0.0;
  double stop = 1.0;
  double step = 0.1;

  [[nodiscard]] VectorXd points() const {
    if (!(step > 0.0) || !(stop > start)) throw DomainError("grid: need stop > start and step > 0");
    const auto count = static_cast<Index>(std::llround((stop - start) / step)) + 1;
    VectorXd g(count);
    for (Index k = 0; k < count; ++k) g[k] = start + step * static_cast<double>(k);
    return g;
  }
};

enum class SourceKind { gp, heaviside, csv };

struct ExperimentConfig {
  std::string name = "custom";
  KernelKind kernel = KernelKind::se;  // family fitted by GPMM and the standard-GP baseline

  SourceKind source = SourceKind::gp;
  Kernel truth_kernel = SeParams{1.0, 1.0};  // gp source only
  GridSpec grid;                             // gp and heaviside sources
  std::string csv_path;                      // csv source; relative paths resolve against data_dir
  std::string data_dir = ".";

  Index n = 120;
  Index m = 7;
  double spacing = 1.0;
  /// Distance between consecutive observation centers; 0 spreads N centers evenly over the grid.
  double center_step = 0.0;
  std::optional<VectorXd> stencil;  // default: triangular over M
  double measurement_noise = 0.01;
  double observation_noise = 0.01;
  /// Noise variances are multiples of the truth's variance rather than absolute.
  bool noise_relative = false;
  /// Fit on y - mean(y) and add the mean back to every estimate (zero-mean GP prior).
  bool center = true;

  FitConfig fit;
  std::uint64_t seed = 0;
  std::string output = "";

  [[nodiscard]] std::uint64_t truth_seed() const { return seed; }
  [[nodiscard]] std::uint64_t sensing_seed() const { return seed ^ 0x5851F42D4C957F2DULL; }

  void validate() const {
    if (n < 1 || m < 1) throw DomainError("experiment: N and M must be >= 1");
    if (!(spacing >= 0.0)) throw DomainError("experiment: spacing must be >= 0");
    if (!(center_step >= 0.0)) throw DomainError("experiment: center_step must be >= 0");
    if (!(measurement_noise >= 0.0) || !(observation_noise >= 0.0))
      throw DomainError("experiment: noise variances must be >= 0");
    if (stencil && stencil->size() != m) throw DomainError("experiment: stencil length differs from M");
    fit.validate();
  }
};

// ---------------------------------------------------------------- JSON

namespace detail {

inline std::string source_name(SourceKind s) {
  switch (s) {
    case SourceKind::gp: return "gp";
    case SourceKind::heaviside: return "heaviside";
    case SourceKind::csv: return "csv";
  }
  return "gp";
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["kernel"] = std::string(kind_name(c.kernel));
  json src = {{"type", detail::source_name(c.source)}};
  if (c.source == SourceKind::gp) src["kernel"] = kernel_to_json(c.truth_kernel);
  if (c.source != SourceKind::csv) src["grid"] = {{"start", c.grid.start}, {"stop", c.grid.stop}, {"step", c.grid.step}};
  if (c.source == SourceKind::csv) src["path"] = c.csv_path;
  j["source"] = src;
  json sensing = {{"N", c.n},
                  {"M", c.m},
                  {"spacing", c.spacing},
                  {"center_step", c.center_step},
                  {"measurement_noise", c.measurement_noise},
                  {"observation_noise", c.observation_noise},
                  {"noise_relative", c.noise_relative}};
  if (c.stencil)
    sensing["stencil"] = std::vector<double>(c.stencil->begin(), c.stencil->end());
  else
    sensing["stencil"] = "triangular";
  j["sensing"] = sensing;
  j["center"] = c.center;
  j["fit"] = {{"max_iterations", c.fit.max_iterations},
              {"gradient_tolerance", c.fit.gradient_tolerance},
              {"restarts", c.fit.restarts},
              {"fd_step", c.fit.fd_step},
              {"weight_mode", c.fit.weight_mode == WeightSpec::Mode::shared ? "shared" : "per_observation"},
              {"gradient", c.fit.gradient == GradientMode::analytic ? "analytic" : "finite_difference"},
              {"parallel_restarts", c.fit.parallel_restarts}};
  if (c.fit.fixed_weights) j["fit"]["fixed_weights"] = weights_to_json(*c.fit.fixed_weights);
  j["seed"] = c.seed;
  j["output"] = c.output;
  return j;
}

/// Fields present in `j` override those of `base`.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig base, const std::string& file = "<config>") {
  auto number = [&](const json& obj, const char* key, double& out, const std::string& prefix) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_number()) throw SchemaError(file, 0, prefix + key, "must be a number");
    out = obj.at(key).get<double>();
  };
  auto count = [&](const json& obj, const char* key, auto& out, const std::string& prefix) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_number_integer() || obj.at(key).get<long long>() < 0)
      throw SchemaError(file, 0, prefix + key, "must be a non-negative integer");
    out = static_cast<std::decay_t<decltype(out)>>(obj.at(key).get<long long>());
  };
  auto boolean = [&](const json& obj, const char* key, bool& out, const std::string& prefix) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_boolean()) throw SchemaError(file, 0, prefix + key, "must be true or false");
    out = obj.at(key).get<bool>();
  };
  auto text = [&](const json& obj, const char* key, std::string& out, const std::string& prefix) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_string()) throw SchemaError(file, 0, prefix + key, "must be a string");
    out = obj.at(key).get<std::string>();
  };

  if (!j.is_object()) throw SchemaError(file, 0, "<root>", "config must be a JSON object");
  ExperimentConfig c = std::move(base);
  text(j, "name", c.name, "");
  if (j.contains("kernel")) {
    std::string k;
    text(j, "kernel", k, "");
    try {
      c.kernel = parse_kind(k);
    } catch (const DomainError& e) {
      throw SchemaError(file, 0, "kernel", e.what());
    }
  }
  if (j.contains("source")) {
    const json& s = j.at("source");
    if (!s.is_object()) throw SchemaError(file, 0, "source", "must be an object");
    if (s.contains("type")) {
      std::string type;
      text(s, "type", type, "source.");
      if (type == "gp")
        c.source = SourceKind::gp;
      else if (type == "heaviside")
        c.source = SourceKind::heaviside;
      else if (type == "csv")
        c.source = SourceKind::csv;
      else
        throw SchemaError(file, 0, "source.type", "expected gp, heaviside or csv, got '" + type + "'");
    }
    if (s.contains("kernel")) c.truth_kernel = kernel_from_json(s.at("kernel"), file);
    if (s.contains("grid")) {
      const json& g = s.at("grid");
      number(g, "start", c.grid.start, "source.grid.");
      number(g, "stop", c.grid.stop, "source.grid.");
      number(g, "step", c.grid.step, "source.grid.");
    }
    text(s, "path", c.csv_path, "source.");
  }
  if (j.contains("sensing")) {
    const json& s = j.at("sensing");
    count(s, "N", c.n, "sensing.");
    count(s, "M", c.m, "sensing.");
    number(s, "spacing", c.spacing, "sensing.");
    number(s, "center_step", c.center_step, "sensing.");
    number(s, "measurement_noise", c.measurement_noise, "sensing.");
    number(s, "observation_noise", c.observation_noise, "sensing.");
    boolean(s, "noise_relative", c.noise_relative, "sensing.");
    if (s.contains("stencil")) {
      if (s.at("stencil").is_string()) {
        if (s.at("stencil").get<std::string>() != "triangular")
          throw SchemaError(file, 0, "sensing.stencil", "expected 'triangular' or an array");
        c.stencil.reset();
      } else {
        c.stencil = vector_from_json(s.at("stencil"), file, "sensing.stencil");
      }
    }
  }
  boolean(j, "center", c.center, "");
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    count(f, "max_iterations", c.fit.max_iterations, "fit.");
    number(f, "gradient_tolerance", c.fit.gradient_tolerance, "fit.");
    count(f, "restarts", c.fit.restarts, "fit.");
    number(f, "fd_step", c.fit.fd_step, "fit.");
    boolean(f, "parallel_restarts", c.fit.parallel_restarts, "fit.");
    if (f.contains("weight_mode")) {
      std::string mode;
      text(f, "weight_mode", mode, "fit.");
      if (mode == "shared")
        c.fit.weight_mode = WeightSpec::Mode::shared;
      else if (mode == "per_observation")
        c.fit.weight_mode = WeightSpec::Mode::per_observation;
      else
        throw SchemaError(file, 0, "fit.weight_mode", "expected shared or per_observation");
    }
    if (f.contains("gradient")) {
      std::string g;
      text(f, "gradient", g, "fit.");
      if (g == "analytic")
        c.fit.gradient = GradientMode::analytic;
      else if (g == "finite_difference")
        c.fit.gradient = GradientMode::finite_difference;
      else
        throw SchemaError(file, 0, "fit.gradient", "expected analytic or finite_difference");
    }
    if (f.contains("fixed_weights")) c.fit.fixed_weights = weights_from_json(f.at("fixed_weights"), file);
  }
  count(j, "seed", c.seed, "");
  text(j, "output", c.output, "");
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw SchemaError(file, 0, "config", e.what());
  }
  return c;
}

/// Everything that determines the results, but not where they are written.
inline json provenance_json(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output");
  return j;
}

inline std::string experiment_hash(const ExperimentConfig& c) { return config_hash(provenance_json(c)); }

// ---------------------------------------------------------------- presets

/// Smooth GP draw, SE kernel, N=120, M=7. Observation centers step half the
/// measurement spacing, so neighbouring observations share measurement locations.
inline ExperimentConfig smooth_preset() {
  ExperimentConfig c;
  c.name = "smooth";
  c.kernel = KernelKind::se;
  c.source = SourceKind::gp;
  c.truth_kernel = SeParams{1.0, 1.5};
  c.grid = GridSpec{0.0, 35.0, 0.25};
  c.n = 120;
  c.m = 7;
  c.spacing = 0.5;
  c.center_step = 0.25;
  c.measurement_noise = 1e-2;
  c.observation_noise = 1e-5;
  c.fit.max_iterations = 1500;
  c.fit.gradient_tolerance = 1e-4;
  c.fit.restarts = 3;
  return c;
}

/// Bundled heart-rate series (unit grid), SE kernel, N=240, M=7.
inline ExperimentConfig hr_preset() {
  ExperimentConfig c;
  c.name = "hr";
  c.kernel = KernelKind::se;
  c.source = SourceKind::csv;
  c.csv_path = "heart_rate.csv";
  c.n = 240;
  c.m = 7;
  c.spacing = 1.0;
  c.center_step = 1.0;
  c.measurement_noise = 1e-2;
  c.observation_noise = 1e-5;
  c.noise_relative = true;
  c.fit.max_iterations = 1500;
  c.fit.gradient_tolerance = 1e-4;
  c.fit.restarts = 3;
  return c;
}

/// Heaviside step, NN kernel, N=120, M=7.
inline ExperimentConfig step_preset() {
  ExperimentConfig c;
  c.name = "step";
  c.kernel = KernelKind::nn;
  c.source = SourceKind::heaviside;
  c.grid = GridSpec{-10.0, 10.0, 0.125};
  c.n = 120;
  c.m = 7;
  c.spacing = 0.25;
  c.center_step = 0.125;
  c.measurement_noise = 1e-2;
  c.observation_noise = 1e-5;
  c.fit.max_iterations = 1500;
  c.fit.gradient_tolerance = 1e-4;
  c.fit.restarts = 3;
  return c;
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "smooth") return smooth_preset();
  if (name == "hr") return hr_preset();
  if (name == "step") return step_preset();
  throw DomainError("unknown preset '" + name + "' (expected smooth, hr or step)");
}

// ---------------------------------------------------------------- stages

inline LatentSignal make_truth(const ExperimentConfig& c) {
  switch (c.source) {
    case SourceKind::gp: return sample_gp_prior(c.truth_kernel, c.grid.points(), c.truth_seed());
    case SourceKind::heaviside: return heaviside(c.grid.points());
    case SourceKind::csv: {
      const std::filesystem::path p(c.csv_path);
      return load_series(p.is_absolute() ? p.string() : (std::filesystem::path(c.data_dir) / p).string());
    }
  }
  throw DomainError("unknown source");
}

inline double signal_variance_of(const LatentSignal& s) {
  return (s.values.array() - s.values.mean()).square().mean();
}

/// Observation centers: a lattice with step center_step centered on the grid and
/// snapped to it, or N points spread evenly so every measurement stays inside the grid.
inline VectorXd observation_centers(const ExperimentConfig& c, const LatentSignal& truth) {
  const double lo = truth.grid[0];
  const double hi = truth.grid[truth.grid.size() - 1];
  const double half = 0.5 * static_cast<double>(c.m - 1) * c.spacing;
  if (c.center_step > 0.0) {
    const double width = static_cast<double>(c.n - 1) * c.center_step;
    const double first = lo + std::round(((lo + hi - width) / 2.0 - lo) / c.center_step) * c.center_step;
    VectorXd centers(c.n);
    for (Index i = 0; i < c.n; ++i) centers[i] = first + c.center_step * static_cast<double>(i);
    return centers;
  }
  return linspace(lo + half, hi - half, c.n);
}

inline SensingConfig sensing_config(const ExperimentConfig& c, const LatentSignal& truth) {
  SensingConfig s;
  s.m = c.m;
  s.spacing = c.spacing;
  s.centers = observation_centers(c, truth);
  s.stencil = WeightSpec::shared(c.stencil ? *c.stencil : triangular_stencil(c.m));
  const double scale = c.noise_relative ? signal_variance_of(truth) : 1.0;
  s.measurement_noise = c.measurement_noise * scale;
  s.observation_noise = c.observation_noise * scale;
  s.seed = c.sensing_seed();
  return s;
}

inline double observation_offset(const ExperimentConfig& c, const ObservationSet& obs) {
  return c.center ? obs.values.mean() : 0.0;
}

inline ObservationSet shifted(ObservationSet obs, double offset) {
  obs.values.array() -= offset;
  return obs;
}

/// The standard GP's view of the data: each observation as one measurement at the
/// mean of its locations.
inline ObservationSet single_location_view(const ObservationSet& obs) {
  ObservationSet out;
  out.locations = obs.locations.rowwise().mean();
  out.values = obs.values;
  return out;
}

inline FitResult fit_gpmm(const ExperimentConfig& c, const ObservationSet& obs) {
  FitConfig f = c.fit;
  f.seed = c.seed;
  return fit(shifted(obs, observation_offset(c, obs)), c.kernel, f);
}

inline FitResult fit_standard_gp(const ExperimentConfig& c, const ObservationSet& obs) {
  FitConfig f = c.fit;
  f.seed = c.seed;
  f.fixed_weights = WeightSpec::shared(VectorXd::Ones(1));
  return fit(shifted(single_location_view(obs), observation_offset(c, obs)), c.kernel, f);
}

inline Estimate infer(const GpmmModel& model, const ObservationSet& obs, const VectorXd& query, double offset) {
  const Posterior p = posterior(model, shifted(obs, offset), query);
  return Estimate{query, p.mean.array() + offset, p.variance};
}

/// Pseudoinverse or ridge estimate of the measurements, averaged over coincident
/// locations and reported in increasing x.
inline Estimate linear_baseline(const ObservationSet& obs, const WeightSpec& weights, std::optional<double> ridge) {
  const StackedSystem sys = stack(weights, obs.values, obs.m());
  const VectorXd m = ridge ? gpmm_linear_solution(sys, 1.0, 0.0, *ridge) : pseudoinverse_solve(sys);
  std::map<double, std::pair<double, int>> at;
  for (Index i = 0; i < obs.n(); ++i)
    for (Index j = 0; j < obs.m(); ++j) {
      auto& slot = at[obs.locations(i, j)];
      slot.first += m[i * obs.m() + j];
      slot.second += 1;
    }
  Estimate e;
  e.x.resize(static_cast<Index>(at.size()));
  e.mean.resize(static_cast<Index>(at.size()));
  Index k = 0;
  for (const auto& [x, sum] : at) {
    e.x[k] = x;
    e.mean[k] = sum.first / sum.second;
    ++k;
  }
  return e;
}

// ---------------------------------------------------------------- comparison

struct MethodScore {
  std::string name;
  double mse = 0.0;
  std::optional<double> extrapolation_mse;
  std::optional<double> lsd;
  std::optional<double> coverage;
};

struct RecoveryReport {
  double span_lo = 0.0;
  double span_hi = 0.0;
  Index points = 0;
  std::vector<MethodScore> methods;

  [[nodiscard]] const MethodScore& method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.name == name) return m;
    throw DomainError("report has no method '" + name + "'");
  }
};

namespace detail {

/// Linear interpolation of (xs, ys) at x, which must lie within [xs.front, xs.back].
inline double interpolate(const VectorXd& xs, const VectorXd& ys, double x) {
  const double* begin = xs.data();
  const double* end = begin + xs.size();
  const double* hit = std::lower_bound(begin, end, x);
  const auto k = static_cast<Index>(hit - begin);
  if (hit != end && *hit == x) return ys[k];
  if (k == 0 || hit == end) throw DomainError("interpolate: location outside the estimate's support");
  const double t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
  return ys[k - 1] + t * (ys[k] - ys[k - 1]);
}

inline bool uniform(const VectorXd& g) {
  if (g.size() < 3) return g.size() == 2;
  const double step = g[1] - g[0];
  for (Index k = 2; k < g.size(); ++k)
    if (std::abs((g[k] - g[k - 1]) - step) > 1e-9 * std::max(1.0, std::abs(step))) return false;
  return true;
}

}  // namespace detail

/// Scores each estimate against the truth on the truth's grid points inside [lo, hi]
/// (the sensed span). Points outside the span that an estimate covers are scored
/// separately as extrapolation. LSD needs a uniform grid; coverage needs a variance.
inline RecoveryReport compare(const LatentSignal& truth, const std::vector<std::pair<std::string, Estimate>>& estimates,
                              double lo, double hi) {
  truth.validate();
  RecoveryReport report;
  report.span_lo = lo;
  report.span_hi = hi;
  std::vector<Index> inside, outside;
  for (Index k = 0; k < truth.grid.size(); ++k)
    (truth.grid[k] >= lo && truth.grid[k] <= hi ? inside : outside).push_back(k);
  if (inside.empty()) throw DomainError("compare: no truth grid point inside the sensed span");
  report.points = static_cast<Index>(inside.size());

  VectorXd span_grid(report.points), span_truth(report.points);
  for (Index q = 0; q < report.points; ++q) {
    span_grid[q] = truth.grid[inside[static_cast<std::size_t>(q)]];
    span_truth[q] = truth.values[inside[static_cast<std::size_t>(q)]];
  }
  const bool spectral = detail::uniform(span_grid);
  std::optional<Psd> truth_psd;
  if (spectral) truth_psd = periodogram(span_truth, span_grid[1] - span_grid[0]);

  for (const auto& [name, est] : estimates) {
    MethodScore score;
    score.name = name;
    const double elo = est.x[0], ehi = est.x[est.x.size() - 1];
    VectorXd mean(report.points);
    VectorXd var(report.points);
    bool covered = true;
    for (Index q = 0; q < report.points; ++q) {
      const double x = span_grid[q];
      if (x < elo || x > ehi) {
        covered = false;
        break;
      }
      mean[q] = detail::interpolate(est.x, est.mean, x);
      if (est.variance) var[q] = detail::interpolate(est.x, *est.variance, x);
    }
    if (!covered) {
      // The estimate does not reach every span point: score only where it does.
      std::vector<double> errs;
      for (Index q = 0; q < report.points; ++q)
        if (span_grid[q] >= elo && span_grid[q] <= ehi) {
          const double d = detail::interpolate(est.x, est.mean, span_grid[q]) - span_truth[q];
          errs.push_back(d * d);
        }
      if (errs.empty()) throw DomainError("compare: estimate '" + name + "' does not overlap the sensed span");
      double total = 0.0;
      for (const double e : errs) total += e;
      score.mse = total / static_cast<double>(errs.size());
      report.methods.push_back(score);
      continue;
    }
    score.mse = (mean - span_truth).squaredNorm() / static_cast<double>(report.points);
    if (est.variance) {
      Index hits = 0;
      for (Index q = 0; q < report.points; ++q)
        if (std::abs(mean[q] - span_truth[q]) <= 2.0 * std::sqrt(std::max(0.0, var[q]))) ++hits;
      score.coverage = static_cast<double>(hits) / static_cast<double>(report.points);
    }
    if (truth_psd) score.lsd = log_spectral_distance(periodogram(mean, span_grid[1] - span_grid[0]), *truth_psd);

    double extra = 0.0;
    Index extra_points = 0;
    for (const Index k : outside) {
      const double x = truth.grid[k];
      if (x < elo || x > ehi) continue;
      const double d = detail::interpolate(est.x, est.mean, x) - truth.values[k];
      extra += d * d;
      ++extra_points;
    }
    if (extra_points > 0) score.extrapolation_mse = extra / static_cast<double>(extra_points);
    report.methods.push_back(score);
  }
  return report;
}

inline json report_to_json(const RecoveryReport& r, const std::string& hash) {
  json j;
  j["config_hash"] = hash;
  j["span"] = {r.span_lo, r.span_hi};
  j["points"] = r.points;
  json methods = json::object();
  for (const auto& m : r.methods) {
    json e;
    e["mse"] = m.mse;
    e["extrapolation_mse"] = m.extrapolation_mse ? json(*m.extrapolation_mse) : json(nullptr);
    e["lsd"] = m.lsd ? json(*m.lsd) : json(nullptr);
    e["coverage"] = m.coverage ? json(*m.coverage) : json(nullptr);
    methods[m.name] = e;
  }
  j["methods"] = methods;
  return j;
}

// ---------------------------------------------------------------- replicate

struct Replication {
  ExperimentConfig config;
  std::string hash;
  LatentSignal truth;
  ObservationSet observations;
  SensingConfig sensing;
  double offset = 0.0;
  FitResult gpmm;
  FitResult gp;
  Estimate gpmm_estimate;
  Estimate gp_estimate;
  RecoveryReport report;
};

inline std::pair<double, double> sensed_span(const ObservationSet& obs) {
  return {obs.locations.minCoeff(), obs.locations.maxCoeff()};
}

/// Runs the whole pipeline in memory; writes files when config.output is set.
inline Replication replicate(const ExperimentConfig& config) {
  config.validate();
  Replication r;
  r.config = config;
  r.hash = experiment_hash(config);
  r.truth = make_truth(config);
  r.sensing = sensing_config(config, r.truth);
  r.observations = sense(r.truth, r.sensing);
  r.offset = observation_offset(config, r.observations);

  r.gpmm = fit_gpmm(config, r.observations);
  r.gp = fit_standard_gp(config, r.observations);
  r.gpmm_estimate = infer(r.gpmm.model, r.observations, r.truth.grid, r.offset);
  r.gp_estimate = infer(r.gp.model, single_location_view(r.observations), r.truth.grid, r.offset);

  const auto [lo, hi] = sensed_span(r.observations);
  r.report = compare(r.truth, {{"gpmm", r.gpmm_estimate}, {"gp", r.gp_estimate}}, lo, hi);

  if (!config.output.empty()) {
    const std::filesystem::path dir(config.output);
    std::filesystem::create_directories(dir);
    auto at = [&](const char* name) { return (dir / name).string(); };
    write_json(at("config.json"), provenance_json(config));
    write_signal(at("truth.csv"), r.truth, r.hash);
    write_observations(at("observations.csv"), r.observations,
                       ObservationMeta{r.observations.n(), r.observations.m(), r.sensing.measurement_noise,
                                       r.sensing.observation_noise, r.sensing.stencil},
                       r.hash);
    json gpmm_json = model_to_json(r.gpmm.model);
    gpmm_json["offset"] = r.offset;
    gpmm_json["nll"] = r.gpmm.nll;
    write_json(at("model_gpmm.json"), gpmm_json);
    json gp_json = model_to_json(r.gp.model);
    gp_json["offset"] = r.offset;
    gp_json["nll"] = r.gp.nll;
    write_json(at("model_gp.json"), gp_json);
    write_estimate(at("posterior_gpmm.csv"), r.gpmm_estimate, r.hash);
    write_estimate(at("posterior_gp.csv"), r.gp_estimate, r.hash);
    const double dt = r.truth.grid.size() > 1 ? r.truth.grid[1] - r.truth.grid[0] : 1.0;
    write_psd(at("psd_truth.csv"), periodogram(r.truth.values, dt), r.hash);
    write_psd(at("psd_gpmm.csv"), periodogram(r.gpmm_estimate.mean, dt), r.hash);
    write_psd(at("psd_gp.csv"), periodogram(r.gp_estimate.mean, dt), r.hash);
    write_json(at("report.json"), report_to_json(r.report, r.hash));
  }
  return r;
}

}  // namespace gpmm
