#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace snode::grf {

/// Gaussian random field over a time interval with RBF kernel
/// K(t1, t2) = exp(-(t1 - t2)^2 / (2 l^2)), sampled at uniform knots.
struct GrfConfig {
  double mean = 0.0;
  double length_scale = 1.0;
  double output_scale = 1.0;
  int n_samples = 64;
  double t0 = 0.0;
  double t1 = 1.0;

  void validate() const;
};

std::vector<double> knot_times(const GrfConfig& cfg);

/// One draw: output_scale * (mean + L z) with L L^T = K + jitter I.
/// Deterministic for a given (cfg, seed).
std::vector<double> sample_grf(const GrfConfig& cfg, std::uint64_t seed);

/// Natural cubic spline through uniform knots, one spline per channel.
/// Evaluation clamps to the end values outside the knot range.
class ParamFunction {
 public:
  ParamFunction() = default;
  ParamFunction(std::vector<double> times, std::vector<std::vector<double>> channels);

  /// Constant function, used for fixed-parameter rollouts.
  static ParamFunction constant(double value, double t0 = 0.0, double t1 = 1.0);

  std::size_t channels() const { return values_.size(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values(std::size_t channel = 0) const { return values_.at(channel); }

  double value(double t, std::size_t channel = 0) const;
  std::vector<double> operator()(double t) const;

 private:
  std::vector<double> times_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> second_;  // spline second derivatives at knots
};

ParamFunction fit_spline(std::span<const double> times, std::span<const double> values);

inline std::vector<double> eval_param(const ParamFunction& pf, double t) { return pf(t); }

}  // namespace snode::grf
