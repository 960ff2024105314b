#pragma once

// File formats: CSV tables with a provenance comment line, JSON for models and sidecars.

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gpmm/datagen.hpp"
#include "gpmm/errors.hpp"
#include "gpmm/kernels.hpp"
#include "gpmm/model.hpp"
#include "gpmm/spectral.hpp"
#include "json.hpp"

namespace gpmm {

using json = nlohmann::json;

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the canonical (sorted-key, compact) JSON dump.
inline std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

/// Shortest text that round-trips to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw DomainError("format_number: conversion failed");
  return {buf, ptr};
}

// ---------------------------------------------------------------- CSV

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::string hash;  // from the "# config_hash=" line, if any

  [[nodiscard]] Index column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == name) return static_cast<Index>(c);
    return -1;
  }
  [[nodiscard]] VectorXd values(Index c) const {
    VectorXd out(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Index>(r)] = rows[r][static_cast<std::size_t>(c)];
    return out;
  }
};

inline void write_table(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError(path, 0, "file", "cannot open for writing");
  out << "# config_hash=" << table.hash << '\n';
  for (std::size_t c = 0; c < table.columns.size(); ++c) out << (c ? "," : "") << table.columns[c];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_number(row[c]);
    out << '\n';
  }
  if (!out) throw SchemaError(path, 0, "file", "write failed");
}

/// Reads a table and checks that its header lists `required` columns (in any order).
inline Table read_table(const std::string& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, 0, "file", "cannot open");
  Table table;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      constexpr std::string_view key = "# config_hash=";
      if (view.substr(0, key.size()) == key) table.hash = std::string(view.substr(key.size()));
      continue;
    }
    std::vector<std::string_view> fields;
    for (std::size_t start = 0;;) {
      const std::size_t comma = view.find(',', start);
      fields.push_back(detail::trim(view.substr(start, comma == std::string_view::npos ? view.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!header) {
      for (const auto f : fields) table.columns.emplace_back(f);
      for (const auto& name : required)
        if (table.column(name) < 0) throw SchemaError(path, lineno, name, "missing column");
      header = true;
      continue;
    }
    if (fields.size() != table.columns.size())
      throw SchemaError(path, lineno, "row",
                        "expected " + std::to_string(table.columns.size()) + " fields, got " + std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      if (!detail::parse_double(fields[c], row[c]))
        throw SchemaError(path, lineno, table.columns[c], "cannot parse '" + std::string(fields[c]) + "' as a number");
    table.rows.push_back(std::move(row));
  }
  if (!header) throw SchemaError(path, lineno, "header", "no header line");
  return table;
}

// ---------------------------------------------------------------- kernels and models

inline json kernel_to_json(const Kernel& k) {
  json j;
  j["kernel"] = kind_name(kind_of(k));
  json params = json::object();
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SeParams>) {
          params["variance"] = v.variance;
          params["lengthscale"] = v.lengthscale;
        } else if constexpr (std::is_same_v<T, NnParams>) {
          params["variance"] = v.variance;
          params["bias_variance"] = v.bias_variance;
          params["input_variance"] = v.input_variance;
        } else {
          params["variance"] = v.variance;
        }
      },
      k);
  j["params"] = params;
  return j;
}

namespace detail {

inline double require_number(const json& j, const std::string& key, const std::string& file) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(file, 0, key, "missing");
  if (!j.at(key).is_number()) throw SchemaError(file, 0, key, "must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

/// Accepts {"kernel": "se"|"nn"|"white", "params": {...}}; missing params take defaults.
inline Kernel kernel_from_json(const json& j, const std::string& file = "<json>") {
  if (!j.contains("kernel") || !j.at("kernel").is_string()) throw SchemaError(file, 0, "kernel", "missing or not a string");
  KernelKind kind;
  try {
    kind = parse_kind(j.at("kernel").get<std::string>());
  } catch (const DomainError& e) {
    throw SchemaError(file, 0, "kernel", e.what());
  }
  const json params = j.value("params", json::object());
  auto get = [&](const char* key, double fallback) {
    if (!params.contains(key)) return fallback;
    if (!params.at(key).is_number()) throw SchemaError(file, 0, std::string("params.") + key, "must be a number");
    return params.at(key).get<double>();
  };
  Kernel k;
  switch (kind) {
    case KernelKind::se: k = SeParams{get("variance", 1.0), get("lengthscale", 1.0)}; break;
    case KernelKind::nn: k = NnParams{get("variance", 1.0), get("bias_variance", 1.0), get("input_variance", 1.0)}; break;
    case KernelKind::white: k = WhiteParams{get("variance", 1.0)}; break;
  }
  try {
    validate(k);
  } catch (const DomainError& e) {
    throw SchemaError(file, 0, "params", e.what());
  }
  return k;
}

inline json weights_to_json(const WeightSpec& w) {
  json j;
  if (w.mode() == WeightSpec::Mode::shared) {
    j["mode"] = "shared";
    j["stencil"] = std::vector<double>(w.row(0).begin(), w.row(0).end());
  } else {
    j["mode"] = "per_observation";
    json rows = json::array();
    for (Index i = 0; i < w.matrix().rows(); ++i) rows.push_back(std::vector<double>(w.row(i).begin(), w.row(i).end()));
    j["matrix"] = rows;
  }
  return j;
}

inline VectorXd vector_from_json(const json& j, const std::string& file, const std::string& field) {
  if (!j.is_array() || j.empty()) throw SchemaError(file, 0, field, "must be a non-empty array of numbers");
  VectorXd out(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw SchemaError(file, 0, field, "entry " + std::to_string(k) + " is not a number");
    out[static_cast<Index>(k)] = j[k].get<double>();
  }
  return out;
}

inline WeightSpec weights_from_json(const json& j, const std::string& file) {
  const std::string mode = j.value("mode", "shared");
  try {
    if (mode == "shared") {
      if (!j.contains("stencil")) throw SchemaError(file, 0, "weights.stencil", "missing");
      return WeightSpec::shared(vector_from_json(j.at("stencil"), file, "weights.stencil"));
    }
    if (mode == "per_observation") {
      if (!j.contains("matrix") || !j.at("matrix").is_array() || j.at("matrix").empty())
        throw SchemaError(file, 0, "weights.matrix", "missing or empty");
      const json& rows = j.at("matrix");
      const VectorXd first = vector_from_json(rows[0], file, "weights.matrix");
      MatrixXd m(static_cast<Index>(rows.size()), first.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const VectorXd row = vector_from_json(rows[r], file, "weights.matrix");
        if (row.size() != first.size()) throw SchemaError(file, 0, "weights.matrix", "ragged rows");
        m.row(static_cast<Index>(r)) = row.transpose();
      }
      return WeightSpec::per_observation(m);
    }
  } catch (const DomainError& e) {
    throw SchemaError(file, 0, "weights", e.what());
  }
  throw SchemaError(file, 0, "weights.mode", "expected 'shared' or 'per_observation', got '" + mode + "'");
}

inline json model_to_json(const GpmmModel& model) {
  json j = kernel_to_json(model.kernel);
  j["measurement_noise"] = model.measurement_noise;
  j["observation_noise"] = model.observation_noise;
  j["weights"] = weights_to_json(model.weights);
  j["jitter"] = {{"initial", model.jitter.initial}, {"max", model.jitter.max}, {"factor", model.jitter.factor}};
  return j;
}

inline GpmmModel model_from_json(const json& j, const std::string& file) {
  GpmmModel model;
  model.kernel = kernel_from_json(j, file);
  model.measurement_noise = detail::require_number(j, "measurement_noise", file);
  model.observation_noise = detail::require_number(j, "observation_noise", file);
  if (!j.contains("weights")) throw SchemaError(file, 0, "weights", "missing");
  model.weights = weights_from_json(j.at("weights"), file);
  if (j.contains("jitter")) {
    const json& jit = j.at("jitter");
    model.jitter.initial = jit.value("initial", model.jitter.initial);
    model.jitter.max = jit.value("max", model.jitter.max);
    model.jitter.factor = jit.value("factor", model.jitter.factor);
  }
  try {
    model.validate();
  } catch (const DomainError& e) {
    throw SchemaError(file, 0, "model", e.what());
  }
  return model;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, 0, "file", "cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path, 0, "json", e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError(path, 0, "file", "cannot open for writing");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- observations

/// Sidecar facts about a simulated observation set; the stencil only when known.
struct ObservationMeta {
  Index n = 0;
  Index m = 0;
  double measurement_noise = 0.0;
  double observation_noise = 0.0;
  std::optional<WeightSpec> stencil;
};

inline std::string sidecar_path(const std::string& csv_path) { return csv_path + ".json"; }

/// Columns i, j, x, y (y repeated on every row of its observation) plus a JSON sidecar.
inline void write_observations(const std::string& path, const ObservationSet& obs, const ObservationMeta& meta,
                               const std::string& hash) {
  Table t;
  t.columns = {"i", "j", "x", "y"};
  t.hash = hash;
  for (Index i = 0; i < obs.n(); ++i)
    for (Index j = 0; j < obs.m(); ++j)
      t.rows.push_back({static_cast<double>(i), static_cast<double>(j), obs.locations(i, j), obs.values[i]});
  write_table(path, t);
  json side = {{"N", obs.n()},
               {"M", obs.m()},
               {"measurement_noise", meta.measurement_noise},
               {"observation_noise", meta.observation_noise},
               {"config_hash", hash}};
  if (meta.stencil) side["stencil"] = weights_to_json(*meta.stencil);
  write_json(sidecar_path(path), side);
}

inline ObservationSet read_observations(const std::string& path, ObservationMeta* meta = nullptr) {
  const Table t = read_table(path, {"i", "j", "x", "y"});
  const Index ci = t.column("i"), cj = t.column("j"), cx = t.column("x"), cy = t.column("y");
  Index n = 0, m = 0;
  for (const auto& row : t.rows) {
    n = std::max(n, static_cast<Index>(row[static_cast<std::size_t>(ci)]) + 1);
    m = std::max(m, static_cast<Index>(row[static_cast<std::size_t>(cj)]) + 1);
  }
  if (n * m != static_cast<Index>(t.rows.size()) || n == 0)
    throw SchemaError(path, 0, "i,j", "rows do not form a complete N x M table");
  ObservationSet obs;
  obs.locations = MatrixXd::Constant(n, m, std::numeric_limits<double>::quiet_NaN());
  obs.values = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  std::size_t lineno = 2;  // comment + header
  for (const auto& row : t.rows) {
    ++lineno;
    const double di = row[static_cast<std::size_t>(ci)], dj = row[static_cast<std::size_t>(cj)];
    if (di < 0 || dj < 0 || di != std::floor(di) || dj != std::floor(dj))
      throw SchemaError(path, lineno, "i,j", "indices must be non-negative integers");
    const auto i = static_cast<Index>(di), j = static_cast<Index>(dj);
    if (!std::isnan(obs.locations(i, j))) throw SchemaError(path, lineno, "i,j", "duplicate entry");
    obs.locations(i, j) = row[static_cast<std::size_t>(cx)];
    const double y = row[static_cast<std::size_t>(cy)];
    if (!std::isnan(obs.values[i]) && obs.values[i] != y)
      throw SchemaError(path, lineno, "y", "differs between rows of observation " + std::to_string(i));
    obs.values[i] = y;
  }
  if (meta) {
    *meta = ObservationMeta{};
    meta->n = n;
    meta->m = m;
    const std::string side = sidecar_path(path);
    if (std::ifstream(side).good()) {
      const json j = read_json(side);
      meta->measurement_noise = j.value("measurement_noise", 0.0);
      meta->observation_noise = j.value("observation_noise", 0.0);
      if (j.contains("stencil")) meta->stencil = weights_from_json(j.at("stencil"), side);
      if (j.value("N", n) != n || j.value("M", m) != m) throw SchemaError(side, 0, "N,M", "disagree with " + path);
    }
  }
  return obs;
}

// ---------------------------------------------------------------- signals and results

inline void write_signal(const std::string& path, const LatentSignal& s, const std::string& hash) {
  Table t;
  t.columns = {"x", "value"};
  t.hash = hash;
  for (Index k = 0; k < s.grid.size(); ++k) t.rows.push_back({s.grid[k], s.values[k]});
  write_table(path, t);
}

inline LatentSignal read_signal(const std::string& path) {
  const Table t = read_table(path, {"x", "value"});
  LatentSignal s{t.values(t.column("x")), t.values(t.column("value")), Provenance::csv};
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw SchemaError(path, 0, "x", e.what());
  }
  return s;
}

/// A function estimate on a set of locations, with variance when the method has one.
struct Estimate {
  VectorXd x;
  VectorXd mean;
  std::optional<VectorXd> variance;
};

inline void write_estimate(const std::string& path, const Estimate& e, const std::string& hash) {
  Table t;
  t.columns = {"x", "mean"};
  if (e.variance) t.columns.emplace_back("variance");
  t.hash = hash;
  for (Index k = 0; k < e.x.size(); ++k) {
    if (e.variance)
      t.rows.push_back({e.x[k], e.mean[k], (*e.variance)[k]});
    else
      t.rows.push_back({e.x[k], e.mean[k]});
  }
  write_table(path, t);
}

inline Estimate read_estimate(const std::string& path) {
  const Table t = read_table(path, {"x", "mean"});
  Estimate e{t.values(t.column("x")), t.values(t.column("mean")), std::nullopt};
  if (const Index c = t.column("variance"); c >= 0) e.variance = t.values(c);
  for (Index k = 1; k < e.x.size(); ++k)
    if (!(e.x[k] > e.x[k - 1])) throw SchemaError(path, static_cast<std::size_t>(k) + 3, "x", "must be strictly increasing");
  if (e.x.size() == 0) throw SchemaError(path, 0, "x", "no rows");
  return e;
}

inline void write_psd(const std::string& path, const Psd& p, const std::string& hash) {
  Table t;
  t.columns = {"frequency", "power"};
  t.hash = hash;
  for (Index k = 0; k < p.frequencies.size(); ++k) t.rows.push_back({p.frequencies[k], p.power[k]});
  write_table(path, t);
}

inline Psd read_psd(const std::string& path) {
  const Table t = read_table(path, {"frequency", "power"});
  return Psd{t.values(t.column("frequency")), t.values(t.column("power"))};
}

}  // namespace gpmm
