#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "gpmm/errors.hpp"

namespace gpmm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Squared-exponential kernel: variance * exp(-(x - x')^2 / (2 lengthscale^2)).
struct SeParams {
  double variance = 1.0;
  double lengthscale = 1.0;
};

/// Arcsine ("neural network") kernel of an infinite erf network with 1-D input:
///
///   variance * (2/pi) * asin( 2(b + s x x') / sqrt((1 + 2(b + s x^2)) (1 + 2(b + s x'^2))) )
///
/// with b = bias_variance and s = input_variance. Not stationary.
struct NnParams {
  double variance = 1.0;
  double bias_variance = 1.0;
  double input_variance = 1.0;
};

/// White kernel: variance when the two locations are bitwise equal, zero otherwise.
/// Gives K_f = variance * I on any set of distinct locations.
struct WhiteParams {
  double variance = 1.0;
};

using Kernel = std::variant<SeParams, NnParams, WhiteParams>;

enum class KernelKind { se, nn, white };

inline KernelKind kind_of(const Kernel& k) {
  return static_cast<KernelKind>(k.index());
}

inline std::string_view kind_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::se: return "se";
    case KernelKind::nn: return "nn";
    case KernelKind::white: return "white";
  }
  return "?";
}

inline KernelKind parse_kind(std::string_view name) {
  if (name == "se") return KernelKind::se;
  if (name == "nn") return KernelKind::nn;
  if (name == "white") return KernelKind::white;
  throw DomainError("unknown kernel kind '" + std::string(name) + "' (expected se, nn or white)");
}

inline void validate(const Kernel& kernel) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw DomainError(std::string("kernel parameter ") + name + " must be finite and > 0");
  };
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        positive(p.variance, "variance");
        if constexpr (std::is_same_v<T, SeParams>) {
          positive(p.lengthscale, "lengthscale");
        } else if constexpr (std::is_same_v<T, NnParams>) {
          positive(p.bias_variance, "bias_variance");
          positive(p.input_variance, "input_variance");
        }
      },
      kernel);
}

/// Prior variance scale (sigma_f^2) of any kernel.
inline double signal_variance(const Kernel& kernel) {
  return std::visit([](const auto& p) { return p.variance; }, kernel);
}

namespace detail {

inline void check_location(double x) {
  if (!std::isfinite(x)) throw DomainError("kernel evaluated at a non-finite location");
}

inline double eval_unchecked(const SeParams& p, double x, double x2) {
  const double d = x - x2;
  return p.variance * std::exp(-(d * d) / (2.0 * p.lengthscale * p.lengthscale));
}

struct NnTerms {
  double z;
  double root;  // sqrt(D1 * D2)
  double d1;
  double d2;
};

inline NnTerms nn_terms(const NnParams& p, double x, double x2) {
  const double d1 = 1.0 + 2.0 * (p.bias_variance + p.input_variance * x * x);
  const double d2 = 1.0 + 2.0 * (p.bias_variance + p.input_variance * x2 * x2);
  const double root = std::sqrt(d1 * d2);
  const double z = 2.0 * (p.bias_variance + p.input_variance * x * x2) / root;
  return {z, root, d1, d2};
}

inline double eval_unchecked(const NnParams& p, double x, double x2) {
  const NnTerms t = nn_terms(p, x, x2);
  return p.variance * (2.0 / std::numbers::pi) * std::asin(t.z);
}

inline double eval_unchecked(const WhiteParams& p, double x, double x2) {
  return x == x2 ? p.variance : 0.0;
}

}  // namespace detail

/// k(x, x'). Symmetric in its two locations.
inline double eval(const Kernel& kernel, double x, double x2) {
  detail::check_location(x);
  detail::check_location(x2);
  return std::visit([&](const auto& p) { return detail::eval_unchecked(p, x, x2); }, kernel);
}

/// Matrix of k(xs[a], xs2[b]).
inline MatrixXd gram(const Kernel& kernel, const VectorXd& xs, const VectorXd& xs2) {
  if (xs.size() == 0 || xs2.size() == 0) throw DomainError("gram: location lists must be non-empty");
  for (double x : xs) detail::check_location(x);
  for (double x : xs2) detail::check_location(x);
  MatrixXd out(xs.size(), xs2.size());
  std::visit(
      [&](const auto& p) {
        for (Index b = 0; b < xs2.size(); ++b)
          for (Index a = 0; a < xs.size(); ++a) out(a, b) = detail::eval_unchecked(p, xs[a], xs2[b]);
      },
      kernel);
  return out;
}

/// Gram matrix of a location list with itself; upper triangle computed, then mirrored,
/// so the result is exactly symmetric.
inline MatrixXd gram(const Kernel& kernel, const VectorXd& xs) {
  if (xs.size() == 0) throw DomainError("gram: location list must be non-empty");
  for (double x : xs) detail::check_location(x);
  const Index n = xs.size();
  MatrixXd out(n, n);
  std::visit(
      [&](const auto& p) {
        for (Index b = 0; b < n; ++b)
          for (Index a = 0; a <= b; ++a) {
            const double v = detail::eval_unchecked(p, xs[a], xs[b]);
            out(a, b) = v;
            out(b, a) = v;
          }
      },
      kernel);
  return out;
}

// ---------------------------------------------------------------------------
// Log-space hyperparameters. Order: SE (variance, lengthscale),
// NN (variance, bias_variance, input_variance), white (variance).

inline Index num_params(const Kernel& kernel) {
  switch (kind_of(kernel)) {
    case KernelKind::se: return 2;
    case KernelKind::nn: return 3;
    case KernelKind::white: return 1;
  }
  return 0;
}

inline std::vector<std::string> param_names(const Kernel& kernel) {
  switch (kind_of(kernel)) {
    case KernelKind::se: return {"variance", "lengthscale"};
    case KernelKind::nn: return {"variance", "bias_variance", "input_variance"};
    case KernelKind::white: return {"variance"};
  }
  return {};
}

inline VectorXd log_params(const Kernel& kernel) {
  return std::visit(
      [](const auto& p) -> VectorXd {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, SeParams>) {
          return VectorXd{{std::log(p.variance), std::log(p.lengthscale)}};
        } else if constexpr (std::is_same_v<T, NnParams>) {
          return VectorXd{{std::log(p.variance), std::log(p.bias_variance), std::log(p.input_variance)}};
        } else {
          return VectorXd{{std::log(p.variance)}};
        }
      },
      kernel);
}

/// Same kernel family as `like`, parameters exp(theta).
inline Kernel with_log_params(const Kernel& like, std::span<const double> theta) {
  if (static_cast<Index>(theta.size()) != num_params(like))
    throw DomainError("with_log_params: wrong parameter count");
  switch (kind_of(like)) {
    case KernelKind::se: return SeParams{std::exp(theta[0]), std::exp(theta[1])};
    case KernelKind::nn: return NnParams{std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])};
    case KernelKind::white: return WhiteParams{std::exp(theta[0])};
  }
  return like;
}

/// d k(x, x') / d log(param) for every hyperparameter, written to `out`.
inline void eval_log_gradient(const Kernel& kernel, double x, double x2, std::span<double> out) {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, SeParams>) {
          const double k = detail::eval_unchecked(p, x, x2);
          const double d = x - x2;
          out[0] = k;
          out[1] = k * d * d / (p.lengthscale * p.lengthscale);
        } else if constexpr (std::is_same_v<T, NnParams>) {
          const detail::NnTerms t = detail::nn_terms(p, x, x2);
          const double scale = p.variance * (2.0 / std::numbers::pi) / std::sqrt(1.0 - t.z * t.z);
          const double dz_db = 2.0 / t.root - t.z * (1.0 / t.d1 + 1.0 / t.d2);
          const double dz_ds = 2.0 * x * x2 / t.root - t.z * (x * x / t.d1 + x2 * x2 / t.d2);
          out[0] = p.variance * (2.0 / std::numbers::pi) * std::asin(t.z);
          out[1] = scale * dz_db * p.bias_variance;
          out[2] = scale * dz_ds * p.input_variance;
        } else {
          out[0] = detail::eval_unchecked(p, x, x2);
        }
      },
      kernel);
}

}  // namespace gpmm
