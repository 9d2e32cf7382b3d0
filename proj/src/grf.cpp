#include "snode/grf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>

#include "snode/error.hpp"
#include "snode/rng.hpp"

namespace snode::grf {

void GrfConfig::validate() const {
  if (!(length_scale > 0.0)) throw InvalidArgument("GRF length scale must be positive");
  if (n_samples < 4) throw InvalidArgument("GRF needs at least 4 knots");
  if (!(t1 > t0)) throw InvalidArgument("GRF time span must be increasing");
  if (!std::isfinite(mean) || !std::isfinite(output_scale)) throw InvalidArgument("GRF mean/scale must be finite");
}

std::vector<double> knot_times(const GrfConfig& cfg) {
  cfg.validate();
  std::vector<double> t(static_cast<std::size_t>(cfg.n_samples));
  const double h = (cfg.t1 - cfg.t0) / (cfg.n_samples - 1);
  for (int i = 0; i < cfg.n_samples; ++i) t[i] = cfg.t0 + h * i;
  t.back() = cfg.t1;
  return t;
}

std::vector<double> sample_grf(const GrfConfig& cfg, std::uint64_t seed) {
  const auto t = knot_times(cfg);
  const Eigen::Index n = cfg.n_samples;
  Eigen::MatrixXd k(n, n);
  const double denom = 2.0 * cfg.length_scale * cfg.length_scale;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-(t[i] - t[j]) * (t[i] - t[j]) / denom);

  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 1e-10;
  for (;;) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) break;
    jitter *= 10.0;
    if (jitter > 1e-6 * (1.0 + 1e-9)) throw Error("GRF covariance is not positive definite even with jitter 1e-6");
  }

  auto rng = make_rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  const Eigen::VectorXd draw = llt.matrixL() * z;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[i] = cfg.output_scale * (cfg.mean + draw[i]);
  return out;
}

namespace {

// Second derivatives of the natural cubic spline (Thomas algorithm).
std::vector<double> natural_second_derivatives(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  std::vector<double> diag(n - 2), upper(n - 2), rhs(n - 2);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1];
    const double h1 = x[i + 1] - x[i];
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
  }
  // Lower diagonal entry of row r is h0 of row r, i.e. x[r+1]-x[r].
  for (std::size_t r = 1; r < diag.size(); ++r) {
    const double lower = x[r + 1] - x[r];
    const double w = lower / diag[r - 1];
    diag[r] -= w * upper[r - 1];
    rhs[r] -= w * rhs[r - 1];
  }
  for (std::size_t r = diag.size(); r-- > 0;) {
    double v = rhs[r];
    if (r + 1 < diag.size()) v -= upper[r] * m[r + 2];
    m[r + 1] = v / diag[r];
  }
  return m;
}

}  // namespace

ParamFunction::ParamFunction(std::vector<double> times, std::vector<std::vector<double>> channels)
    : times_(std::move(times)), values_(std::move(channels)) {
  if (times_.size() < 4) throw InvalidArgument("spline needs at least 4 knots");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1])) throw InvalidArgument("spline knot times must be strictly ascending");
  if (values_.empty()) throw InvalidArgument("spline needs at least one channel");
  for (const auto& v : values_) {
    if (v.size() != times_.size()) throw InvalidArgument("spline values do not match knot count");
    second_.push_back(natural_second_derivatives(times_, v));
  }
}

ParamFunction ParamFunction::constant(double value, double t0, double t1) {
  std::vector<double> t(4);
  for (int i = 0; i < 4; ++i) t[i] = t0 + (t1 - t0) * i / 3.0;
  return ParamFunction(std::move(t), {std::vector<double>(4, value)});
}

double ParamFunction::value(double t, std::size_t channel) const {
  const auto& y = values_.at(channel);
  if (t <= times_.front()) return y.front();
  if (t >= times_.back()) return y.back();
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
  const auto& m = second_[channel];
  const double h = times_[i + 1] - times_[i];
  const double a = (times_[i + 1] - t) / h;
  const double b = (t - times_[i]) / h;
  return a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
}

std::vector<double> ParamFunction::operator()(double t) const {
  std::vector<double> out(values_.size());
  for (std::size_t c = 0; c < values_.size(); ++c) out[c] = value(t, c);
  return out;
}

ParamFunction fit_spline(std::span<const double> times, std::span<const double> values) {
  return ParamFunction({times.begin(), times.end()}, {{values.begin(), values.end()}});
}

}  // namespace snode::grf
