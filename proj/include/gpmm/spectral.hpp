#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "gpmm/errors.hpp"

namespace gpmm {

struct Psd {
  Eigen::VectorXd frequencies;  // cycles per unit input
  Eigen::VectorXd power;
};

enum class Window { none, hann };

/// One-sided periodogram of the mean-removed signal, normalized so that
/// sum(power) * df equals the (1/G) variance of the signal for Window::none.
inline Psd periodogram(const Eigen::VectorXd& signal, double spacing, Window window = Window::none) {
  const Eigen::Index g = signal.size();
  if (g < 2) throw DomainError("periodogram: need at least two samples");
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw DomainError("periodogram: spacing must be > 0");
  if (!signal.allFinite()) throw DomainError("periodogram: non-finite sample");

  std::vector<double> x(static_cast<std::size_t>(g));
  const double mean = signal.mean();
  double window_power = 1.0;
  if (window == Window::hann) {
    double sum_sq = 0.0;
    for (Eigen::Index k = 0; k < g; ++k) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(g));
      x[static_cast<std::size_t>(k)] = (signal[k] - mean) * w;
      sum_sq += w * w;
    }
    window_power = sum_sq / static_cast<double>(g);
  } else {
    for (Eigen::Index k = 0; k < g; ++k) x[static_cast<std::size_t>(k)] = signal[k] - mean;
  }

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, x);

  const Eigen::Index bins = g / 2 + 1;
  Psd psd;
  psd.frequencies.resize(bins);
  psd.power.resize(bins);
  const double df = 1.0 / (static_cast<double>(g) * spacing);
  const double norm = spacing / (static_cast<double>(g) * window_power);
  for (Eigen::Index k = 0; k < bins; ++k) {
    psd.frequencies[k] = static_cast<double>(k) * df;
    double p = std::norm(spectrum[static_cast<std::size_t>(k)]) * norm;
    const bool nyquist = (g % 2 == 0) && k == g / 2;
    if (k != 0 && !nyquist) p *= 2.0;
    psd.power[k] = p;
  }
  return psd;
}

/// Root-mean-square difference of log10(power + floor) over the shared frequency grid,
/// floor = 1e-12 x the largest power in either spectrum.
inline double log_spectral_distance(const Psd& a, const Psd& b) {
  if (a.frequencies.size() != b.frequencies.size() || a.power.size() != a.frequencies.size() ||
      b.power.size() != b.frequencies.size())
    throw DomainError("log_spectral_distance: frequency grids differ in length");
  if (a.frequencies.size() == 0) throw DomainError("log_spectral_distance: empty spectrum");
  for (Eigen::Index k = 0; k < a.frequencies.size(); ++k) {
    const double fa = a.frequencies[k];
    const double fb = b.frequencies[k];
    if (std::abs(fa - fb) > 1e-12 * std::max({1.0, std::abs(fa), std::abs(fb)}))
      throw DomainError("log_spectral_distance: frequency grids differ");
  }
  const double peak = std::max(a.power.maxCoeff(), b.power.maxCoeff());
  const double floor = peak > 0.0 ? 1e-12 * peak : 1.0;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < a.power.size(); ++k) {
    const double d = std::log10(a.power[k] + floor) - std::log10(b.power[k] + floor);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(a.power.size()));
}

}  // namespace gpmm
