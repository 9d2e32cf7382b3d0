#include "snode/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "snode/error.hpp"

namespace snode::spectral {

namespace {

// The FFTW planner is not reentrant; execution of existing plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<double> signed_wavenumbers(int n, double length) {
  std::vector<double> k(static_cast<std::size_t>(n));
  const double scale = 2.0 * std::numbers::pi / length;
  for (int j = 0; j < n; ++j) k[j] = scale * (j < (n + 1) / 2 ? j : j - n);
  return k;
}

}  // namespace

Grid Grid::point() { return Grid{0, {}, {}}; }

Grid Grid::line(int n, double length) { return Grid{1, {n}, {length}}; }

Grid Grid::plane(int nx, int ny, double lx, double ly) { return Grid{2, {nx, ny}, {lx, ly}}; }

std::size_t Grid::size() const {
  std::size_t total = 1;
  for (int v : n) total *= static_cast<std::size_t>(v);
  return total;
}

double Grid::spacing(int axis) const { return length.at(axis) / n.at(axis); }

std::vector<double> Grid::coordinates(int axis) const {
  std::vector<double> x(static_cast<std::size_t>(n.at(axis)));
  const double h = spacing(axis);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = h * static_cast<double>(i);
  return x;
}

void Grid::validate() const {
  if (dim < 0 || dim > 2) throw InvalidArgument("grid dimension must be 0, 1 or 2");
  if (n.size() != static_cast<std::size_t>(dim) || length.size() != static_cast<std::size_t>(dim))
    throw InvalidArgument("grid axis count does not match its dimension");
  for (int a = 0; a < dim; ++a) {
    if (n[a] < 4 || n[a] % 2 != 0)
      throw InvalidArgument("grid points per axis must be even and >= 4, got " + std::to_string(n[a]));
    if (!(length[a] > 0.0) || !std::isfinite(length[a]))
      throw InvalidArgument("grid axis length must be positive");
  }
}

WavenumberGrid wavenumber_grid(const Grid& grid) {
  grid.validate();
  if (grid.dim == 0) throw InvalidArgument("wavenumbers are undefined for a 0-d grid");
  WavenumberGrid out;
  for (int a = 0; a < grid.dim; ++a) out.axes.push_back(signed_wavenumbers(grid.n[a], grid.length[a]));
  return out;
}

struct Transform::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

Transform::Transform(const Grid& grid)
    : grid_(grid), size_(grid.size()), k_(wavenumber_grid(grid)), plans_(std::make_unique<Plans>()) {
  dealias_.assign(size_, 1.0);
  for (std::size_t p = 0; p < size_; ++p) {
    std::size_t rest = p;
    for (int a = grid_.dim - 1; a >= 0; --a) {
      const int na = grid_.n[a];
      const int j = static_cast<int>(rest % na);
      rest /= na;
      const int signed_j = j <= na / 2 ? j : j - na;
      if (3 * std::abs(signed_j) >= na) dealias_[p] = 0.0;
    }
  }

  std::lock_guard lock(planner_mutex());
  auto* in = fftw_alloc_complex(size_);
  auto* out = fftw_alloc_complex(size_);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  plans_->forward = fftw_plan_dft(grid_.dim, grid_.n.data(), in, out, FFTW_FORWARD, flags);
  plans_->backward = fftw_plan_dft(grid_.dim, grid_.n.data(), in, out, FFTW_BACKWARD, flags);
  fftw_free(in);
  fftw_free(out);
  if (!plans_->forward || !plans_->backward) throw Error("FFTW planning failed");
}

Transform::~Transform() {
  std::lock_guard lock(planner_mutex());
  if (plans_->forward) fftw_destroy_plan(plans_->forward);
  if (plans_->backward) fftw_destroy_plan(plans_->backward);
}

std::vector<Complex> Transform::forward(std::span<const double> values) const {
  if (values.size() != size_) throw InvalidArgument("field size does not match grid");
  std::vector<Complex> in(values.begin(), values.end());
  std::vector<Complex> out(size_);
  fftw_execute_dft(plans_->forward, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

void Transform::inverse(std::span<const Complex> spectrum, std::span<double> out,
                        double* imag_residue) const {
  if (spectrum.size() != size_ || out.size() != size_)
    throw InvalidArgument("spectrum size does not match grid");
  std::vector<Complex> in(spectrum.begin(), spectrum.end());
  std::vector<Complex> res(size_);
  fftw_execute_dft(plans_->backward, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(res.data()));
  const double scale = 1.0 / static_cast<double>(size_);
  double worst = 0.0;
  for (std::size_t i = 0; i < size_; ++i) {
    out[i] = res[i].real() * scale;
    worst = std::max(worst, std::abs(res[i].imag()) * scale);
  }
  if (imag_residue) *imag_residue = worst;
}

std::vector<Complex> Transform::derivative_multiplier(std::span<const int> orders) const {
  if (orders.size() != static_cast<std::size_t>(grid_.dim))
    throw InvalidArgument("one derivative order per axis is required");
  int total = 0;
  for (int o : orders) {
    if (o < 0) throw InvalidArgument("derivative orders must be non-negative");
    total += o;
  }
  if (total > 4) throw InvalidArgument("total derivative order above 4 is not supported");

  // Per-axis factors (i k)^order, Nyquist zeroed for odd orders.
  std::vector<std::vector<Complex>> factors(grid_.dim);
  for (int a = 0; a < grid_.dim; ++a) {
    const int na = grid_.n[a];
    factors[a].resize(static_cast<std::size_t>(na));
    for (int j = 0; j < na; ++j) {
      if (orders[a] % 2 == 1 && j == na / 2) {
        factors[a][j] = 0.0;
        continue;
      }
      const Complex ik(0.0, k_.axes[a][j]);
      Complex f = 1.0;
      for (int r = 0; r < orders[a]; ++r) f *= ik;
      factors[a][j] = f;
    }
  }
  std::vector<Complex> m(size_);
  if (grid_.dim == 1) {
    m = factors[0];
  } else {
    const int ny = grid_.n[1];
    for (std::size_t p = 0; p < size_; ++p) m[p] = factors[0][p / ny] * factors[1][p % ny];
  }
  return m;
}

std::vector<double> Transform::inverse_laplacian_multiplier() const {
  if (grid_.dim != 2) throw InvalidArgument("inverse Laplacian requires a 2-d grid");
  const int ny = grid_.n[1];
  std::vector<double> m(size_);
  for (std::size_t p = 0; p < size_; ++p) {
    const double kx = k_.axes[0][p / ny];
    const double ky = k_.axes[1][p % ny];
    const double k2 = kx * kx + ky * ky;
    m[p] = k2 == 0.0 ? 0.0 : 1.0 / k2;
  }
  return m;
}

void Transform::apply(std::span<const double> values, std::span<const Complex> multiplier,
                      std::span<double> out, double* imag_residue) const {
  auto spec = forward(values);
  for (std::size_t i = 0; i < size_; ++i) spec[i] *= multiplier[i];
  inverse(spec, out, imag_residue);
}

std::shared_ptr<const Transform> transform_for(const Grid& grid) {
  static std::mutex m;
  static std::map<std::pair<std::vector<int>, std::vector<double>>, std::shared_ptr<const Transform>> cache;
  std::lock_guard lock(m);
  auto key = std::make_pair(grid.n, grid.length);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto t = std::make_shared<const Transform>(grid);
  cache.emplace(std::move(key), t);
  return t;
}

namespace {

void require_finite(const Field& f) {
  if (!f.allFinite()) throw InvalidArgument("field contains non-finite values");
}

}  // namespace

Field spectral_derivative(const Field& f, const Grid& grid, std::span<const int> orders,
                          double* imag_residue) {
  grid.validate();
  if (grid.dim == 0) throw InvalidArgument("spatial derivatives need a grid of dimension >= 1");
  if (static_cast<std::size_t>(f.cols()) != grid.size()) throw InvalidArgument("field size does not match grid");
  require_finite(f);
  auto tr = transform_for(grid);
  const auto mult = tr->derivative_multiplier(orders);
  Field out(f.rows(), f.cols());
  double worst = 0.0;
  for (Eigen::Index c = 0; c < f.rows(); ++c) {
    double r = 0.0;
    tr->apply({f.row(c).data(), grid.size()}, mult, {out.row(c).data(), grid.size()}, &r);
    worst = std::max(worst, r);
  }
  if (imag_residue) *imag_residue = worst;
  return out;
}

Field inverse_laplacian_2d(const Field& f, const Grid& grid) {
  grid.validate();
  if (grid.dim != 2) throw InvalidArgument("inverse Laplacian requires a 2-d grid");
  if (static_cast<std::size_t>(f.cols()) != grid.size()) throw InvalidArgument("field size does not match grid");
  require_finite(f);
  auto tr = transform_for(grid);
  const auto inv = tr->inverse_laplacian_multiplier();
  const std::vector<Complex> mult(inv.begin(), inv.end());
  Field out(f.rows(), f.cols());
  for (Eigen::Index c = 0; c < f.rows(); ++c)
    tr->apply({f.row(c).data(), grid.size()}, mult, {out.row(c).data(), grid.size()});
  return out;
}

std::vector<double> temporal_derivative(std::span<const double> series, double dt,
                                        TimeDerivativeMethod method) {
  const std::size_t n = series.size();
  if (n < 4) throw InvalidArgument("temporal derivative needs at least 4 samples");
  if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
  std::vector<double> d(n);

  if (method == TimeDerivativeMethod::central_fd) {
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    d[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt);
    d[n - 1] = (3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / (2.0 * dt);
    return d;
  }

  // The detrended variant removes the chord through the end samples,
  // differentiates the remainder spectrally, then restores the chord's slope.
  const double slope = method == TimeDerivativeMethod::spectral_detrended
                           ? (series[n - 1] - series[0]) / (dt * static_cast<double>(n - 1))
                           : 0.0;
  std::vector<Complex> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = series[i] - (series[0] + slope * dt * static_cast<double>(i));
  std::vector<Complex> spec(n);
  {
    fftw_plan fwd;
    fftw_plan bwd;
    {
      std::lock_guard lock(planner_mutex());
      fwd = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(buf.data()),
                             reinterpret_cast<fftw_complex*>(spec.data()), FFTW_FORWARD, FFTW_ESTIMATE);
      bwd = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(spec.data()),
                             reinterpret_cast<fftw_complex*>(buf.data()), FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(fwd);
    const double scale = 2.0 * std::numbers::pi / (static_cast<double>(n) * dt);
    const long nn = static_cast<long>(n);
    for (long j = 0; j < nn; ++j) {
      const long sj = j <= nn / 2 ? j : j - nn;
      if (nn % 2 == 0 && j == nn / 2) {
        spec[j] = 0.0;
        continue;
      }
      spec[j] *= Complex(0.0, scale * static_cast<double>(sj));
    }
    fftw_execute(bwd);
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  for (std::size_t i = 0; i < n; ++i) d[i] = buf[i].real() / static_cast<double>(n) + slope;
  return d;
}

std::string to_string(TimeDerivativeMethod m) {
  switch (m) {
    case TimeDerivativeMethod::spectral: return "spectral";
    case TimeDerivativeMethod::spectral_detrended: return "spectral_detrended";
    case TimeDerivativeMethod::central_fd: return "central_fd";
  }
  return "?";
}

TimeDerivativeMethod parse_time_derivative(const std::string& name) {
  if (name == "spectral") return TimeDerivativeMethod::spectral;
  if (name == "spectral_detrended") return TimeDerivativeMethod::spectral_detrended;
  if (name == "central_fd") return TimeDerivativeMethod::central_fd;
  throw InvalidArgument("unknown time-derivative method '" + name + "'");
}

}  // namespace snode::spectral
