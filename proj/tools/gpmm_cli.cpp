// gpmm: file-in/file-out driver for simulate -> fit -> infer -> baseline -> psd -> compare.
//
// Exit codes: 0 success, 2 schema or input error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gpmm/experiment.hpp"

#ifndef GPMM_DATA_DIR
#define GPMM_DATA_DIR "data"
#endif

using namespace gpmm;

namespace {

constexpr int kSchemaExit = 2;
constexpr int kNumericalExit = 3;

/// Config assembly shared by every subcommand: preset or defaults, then the --config
/// file, then individual flags.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> kernel;
  std::optional<std::uint64_t> seed;
  std::optional<long long> n, m;
  std::optional<double> spacing, center_step, measurement_noise, observation_noise;
  std::optional<int> restarts, max_iterations;
  std::optional<double> gradient_tolerance;
  std::optional<std::string> weight_mode, gradient;
  std::optional<std::string> output;
  std::string data_dir = GPMM_DATA_DIR;

  void add_to(CLI::App* app, bool sensing) {
    app->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--kernel", kernel, "kernel family: se | nn");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--restarts", restarts, "optimizer restarts");
    app->add_option("--max-iterations", max_iterations, "iterations per restart");
    app->add_option("--gradient-tolerance", gradient_tolerance, "stop when max |gradient| falls below this");
    app->add_option("--weight-mode", weight_mode, "shared | per_observation");
    app->add_option("--gradient", gradient, "analytic | finite_difference");
    if (!sensing) return;
    app->add_option("-N,--observations-count", n, "number of observations");
    app->add_option("-M,--measurements", m, "measurements per observation");
    app->add_option("--spacing", spacing, "distance between measurements of one observation");
    app->add_option("--center-step", center_step, "distance between observation centers (0: spread evenly)");
    app->add_option("--measurement-noise", measurement_noise, "measurement noise variance");
    app->add_option("--observation-noise", observation_noise, "observation noise variance");
    app->add_option("--output", output, "output directory");
    app->add_option("--data-dir", data_dir, "directory for relative CSV sources");
  }

  [[nodiscard]] ExperimentConfig resolve(ExperimentConfig base) const {
    ExperimentConfig c = config_path.empty() ? std::move(base)
                                             : config_from_json(read_json(config_path), std::move(base), config_path);
    json patch = json::object();
    if (kernel) patch["kernel"] = *kernel;
    if (seed) patch["seed"] = *seed;
    if (n) patch["sensing"]["N"] = *n;
    if (m) patch["sensing"]["M"] = *m;
    if (spacing) patch["sensing"]["spacing"] = *spacing;
    if (center_step) patch["sensing"]["center_step"] = *center_step;
    if (measurement_noise) patch["sensing"]["measurement_noise"] = *measurement_noise;
    if (observation_noise) patch["sensing"]["observation_noise"] = *observation_noise;
    if (restarts) patch["fit"]["restarts"] = *restarts;
    if (max_iterations) patch["fit"]["max_iterations"] = *max_iterations;
    if (gradient_tolerance) patch["fit"]["gradient_tolerance"] = *gradient_tolerance;
    if (weight_mode) patch["fit"]["weight_mode"] = *weight_mode;
    if (gradient) patch["fit"]["gradient"] = *gradient;
    if (output) patch["output"] = *output;
    c = config_from_json(patch, std::move(c), "<flags>");
    c.data_dir = data_dir;
    return c;
  }
};

std::filesystem::path require_output_dir(const ExperimentConfig& c) {
  if (c.output.empty()) throw SchemaError("<flags>", 0, "output", "no output directory (--output or \"output\")");
  std::filesystem::create_directories(c.output);
  return c.output;
}

/// Query grid from "start:stop:step" or from the x column of a CSV.
VectorXd query_grid(const std::string& grid, const std::string& grid_from) {
  if (!grid_from.empty()) {
    const Table t = read_table(grid_from, {"x"});
    return t.values(t.column("x"));
  }
  if (grid.empty()) throw SchemaError("<flags>", 0, "grid", "need --grid start:stop:step or --grid-from file.csv");
  const auto a = grid.find(':'), b = grid.rfind(':');
  GridSpec g;
  if (a == std::string::npos || a == b || !detail::parse_double(std::string_view(grid).substr(0, a), g.start) ||
      !detail::parse_double(std::string_view(grid).substr(a + 1, b - a - 1), g.stop) ||
      !detail::parse_double(std::string_view(grid).substr(b + 1), g.step))
    throw SchemaError("<flags>", 0, "grid", "expected start:stop:step, got '" + grid + "'");
  try {
    return g.points();
  } catch (const DomainError& e) {
    throw SchemaError("<flags>", 0, "grid", e.what());
  }
}

json fit_report(const FitResult& r) {
  return {{"nll", r.nll},
          {"iterations", r.iterations},
          {"gradient_norm", r.gradient_norm},
          {"converged", r.converged},
          {"best_restart", r.best_restart},
          {"restart_nlls", r.restart_nlls},
          {"identified_noise", r.identified_noise},
          {"trace", r.trace}};
}

json model_file(const FitResult& r, double offset) {
  json j = model_to_json(r.model);
  j["offset"] = offset;
  j["fit"] = fit_report(r);
  return j;
}

double model_offset(const json& j) { return j.value("offset", 0.0); }

WeightSpec sidecar_stencil(const std::string& obs_path, const ObservationMeta& meta, const std::string& weights_path) {
  if (!weights_path.empty()) return weights_from_json(read_json(weights_path), weights_path);
  if (meta.stencil) return *meta.stencil;
  throw SchemaError(sidecar_path(obs_path), 0, "stencil", "weights unknown: pass --weights or a sidecar with \"stencil\"");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process recovery of a latent signal from mixtures of noisy measurements"};
  app.require_subcommand(1);

  // simulate
  ConfigFlags sim_flags;
  auto* simulate = app.add_subcommand("simulate", "draw a truth and sense it; writes truth.csv and observations.csv");
  sim_flags.add_to(simulate, true);
  std::string sim_preset;
  simulate->add_option("--preset", sim_preset, "start from a preset: smooth | hr | step");

  // fit
  ConfigFlags fit_flags;
  std::string fit_obs, fit_out, fit_weights;
  bool fit_fixed = false;
  auto* fit_cmd = app.add_subcommand("fit", "learn kernel, noise and weights by minimizing the NLL");
  fit_flags.add_to(fit_cmd, false);
  fit_cmd->add_option("--observations", fit_obs, "observations CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit_out, "model JSON to write")->required();
  fit_cmd->add_flag("--fixed-weights", fit_fixed, "keep the stencil from the sidecar (or --weights) fixed");
  fit_cmd->add_option("--weights", fit_weights, "weights JSON used with --fixed-weights");

  // infer
  std::string inf_model, inf_obs, inf_out, inf_grid, inf_grid_from;
  auto* infer_cmd = app.add_subcommand("infer", "posterior mean and variance of the latent signal on a grid");
  infer_cmd->add_option("--model", inf_model, "model JSON from fit")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--observations", inf_obs, "observations CSV")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--grid", inf_grid, "query grid start:stop:step");
  infer_cmd->add_option("--grid-from", inf_grid_from, "take the query grid from the x column of a CSV")
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", inf_out, "posterior CSV (x, mean, variance)")->required();

  // baseline
  ConfigFlags base_flags;
  std::string base_mode, base_obs, base_out, base_grid, base_grid_from, base_weights;
  double base_ridge = 1e-2;
  auto* baseline = app.add_subcommand("baseline", "pseudoinverse, ridge or standard-GP estimate");
  base_flags.add_to(baseline, false);
  baseline->add_option("--mode", base_mode, "pseudoinverse | ridge | gp-standard")
      ->required()
      ->check(CLI::IsMember({"pseudoinverse", "ridge", "gp-standard"}));
  baseline->add_option("--observations", base_obs, "observations CSV")->required()->check(CLI::ExistingFile);
  baseline->add_option("--weights", base_weights, "weights JSON (default: sidecar stencil)");
  baseline->add_option("--ridge", base_ridge, "ridge penalty for --mode ridge");
  baseline->add_option("--grid", base_grid, "query grid for gp-standard, start:stop:step");
  baseline->add_option("--grid-from", base_grid_from, "query grid for gp-standard from a CSV x column")
      ->check(CLI::ExistingFile);
  baseline->add_option("--out", base_out, "estimate CSV")->required();

  // psd
  std::string psd_in, psd_out, psd_column, psd_window = "none";
  auto* psd_cmd = app.add_subcommand("psd", "one-sided periodogram of a uniformly sampled series");
  psd_cmd->add_option("--input", psd_in, "CSV with an x column")->required()->check(CLI::ExistingFile);
  psd_cmd->add_option("--column", psd_column, "value column (default: mean, else value)");
  psd_cmd->add_option("--window", psd_window, "none | hann")->check(CLI::IsMember({"none", "hann"}));
  psd_cmd->add_option("--out", psd_out, "PSD CSV (frequency, power)")->required();

  // compare
  std::string cmp_truth, cmp_out, cmp_obs;
  std::vector<std::string> cmp_estimates;
  auto* compare_cmd = app.add_subcommand("compare", "MSE, coverage and log-spectral distance against a truth");
  compare_cmd->add_option("--truth", cmp_truth, "truth CSV (x, value)")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--estimate", cmp_estimates, "name=path.csv (repeatable)")->required();
  compare_cmd->add_option("--observations", cmp_obs, "observations CSV; its locations set the scored span")
      ->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", cmp_out, "report JSON")->required();

  // replicate
  ConfigFlags rep_flags;
  std::string rep_preset;
  auto* replicate_cmd = app.add_subcommand("replicate", "run a preset end to end and write every artifact");
  replicate_cmd->add_option("preset", rep_preset, "smooth | hr | step")
      ->required()
      ->check(CLI::IsMember({"smooth", "hr", "step"}));
  rep_flags.add_to(replicate_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kSchemaExit;
  }

  try {
    if (*simulate) {
      const ExperimentConfig c = sim_flags.resolve(sim_preset.empty() ? ExperimentConfig{} : preset(sim_preset));
      const auto dir = require_output_dir(c);
      const std::string hash = experiment_hash(c);
      const LatentSignal truth = make_truth(c);
      const SensingConfig s = sensing_config(c, truth);
      const ObservationSet obs = sense(truth, s);
      write_json((dir / "config.json").string(), provenance_json(c));
      write_signal((dir / "truth.csv").string(), truth, hash);
      write_observations((dir / "observations.csv").string(), obs,
                         ObservationMeta{obs.n(), obs.m(), s.measurement_noise, s.observation_noise, s.stencil}, hash);
      std::cout << "wrote " << (dir / "observations.csv").string() << " (N=" << obs.n() << ", M=" << obs.m() << ")\n";
    } else if (*fit_cmd) {
      ExperimentConfig c = fit_flags.resolve(ExperimentConfig{});
      ObservationMeta meta;
      const ObservationSet obs = read_observations(fit_obs, &meta);
      if (fit_fixed) c.fit.fixed_weights = sidecar_stencil(fit_obs, meta, fit_weights);
      const double offset = observation_offset(c, obs);
      const FitResult r = fit_gpmm(c, obs);
      write_json(fit_out, model_file(r, offset));
      std::cout << "nll " << format_number(r.nll) << " after " << r.iterations << " iterations\n";
    } else if (*infer_cmd) {
      const json mj = read_json(inf_model);
      const GpmmModel model = model_from_json(mj, inf_model);
      const ObservationSet obs = read_observations(inf_obs);
      const Estimate e = infer(model, obs, query_grid(inf_grid, inf_grid_from), model_offset(mj));
      write_estimate(inf_out, e, config_hash(mj));
    } else if (*baseline) {
      ExperimentConfig c = base_flags.resolve(ExperimentConfig{});
      ObservationMeta meta;
      const ObservationSet obs = read_observations(base_obs, &meta);
      json provenance = {{"mode", base_mode}, {"observations", read_table(base_obs, {}).hash}};
      Estimate e;
      if (base_mode == "gp-standard") {
        const FitResult r = fit_standard_gp(c, obs);
        e = infer(r.model, single_location_view(obs), query_grid(base_grid, base_grid_from),
                  observation_offset(c, obs));
        provenance["config"] = to_json(c);
      } else {
        const WeightSpec w = sidecar_stencil(base_obs, meta, base_weights);
        std::optional<double> ridge;
        if (base_mode == "ridge") {
          ridge = base_ridge;
          provenance["ridge"] = base_ridge;
        }
        e = linear_baseline(obs, w, ridge);
      }
      write_estimate(base_out, e, config_hash(provenance));
    } else if (*psd_cmd) {
      const Table t = read_table(psd_in, {"x"});
      Index col = psd_column.empty() ? t.column("mean") : t.column(psd_column);
      if (psd_column.empty() && col < 0) col = t.column("value");
      if (col < 0) throw SchemaError(psd_in, 1, psd_column.empty() ? "mean" : psd_column, "missing column");
      const VectorXd x = t.values(t.column("x"));
      if (x.size() < 2 || !detail::uniform(x)) throw SchemaError(psd_in, 0, "x", "needs a uniform grid of >= 2 points");
      write_psd(psd_out, periodogram(t.values(col), x[1] - x[0], psd_window == "hann" ? Window::hann : Window::none),
                t.hash);
    } else if (*compare_cmd) {
      const LatentSignal truth = read_signal(cmp_truth);
      std::vector<std::pair<std::string, Estimate>> estimates;
      for (const auto& spec : cmp_estimates) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0)
          throw SchemaError("<flags>", 0, "estimate", "expected name=path, got '" + spec + "'");
        estimates.emplace_back(spec.substr(0, eq), read_estimate(spec.substr(eq + 1)));
      }
      double lo = truth.grid[0], hi = truth.grid[truth.grid.size() - 1];
      if (!cmp_obs.empty()) std::tie(lo, hi) = sensed_span(read_observations(cmp_obs));
      const RecoveryReport r = compare(truth, estimates, lo, hi);
      write_json(cmp_out, report_to_json(r, read_table(cmp_truth, {}).hash));
      for (const auto& m : r.methods)
        std::cout << m.name << " mse " << format_number(m.mse)
                  << (m.lsd ? " lsd " + format_number(*m.lsd) : std::string())
                  << (m.coverage ? " coverage " + format_number(*m.coverage) : std::string()) << '\n';
    } else if (*replicate_cmd) {
      ExperimentConfig c = rep_flags.resolve(preset(rep_preset));
      if (c.output.empty()) c.output = "results/" + c.name;
      const Replication r = replicate(c);
      for (const auto& m : r.report.methods)
        std::cout << m.name << " mse " << format_number(m.mse)
                  << (m.lsd ? " lsd " + format_number(*m.lsd) : std::string())
                  << (m.coverage ? " coverage " + format_number(*m.coverage) : std::string()) << '\n';
      std::cout << "wrote " << c.output << '\n';
    }
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSchemaExit;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalExit;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSchemaExit;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSchemaExit;
  }
  return 0;
}
