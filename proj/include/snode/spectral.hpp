#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "snode/types.hpp"

namespace snode::spectral {

using Complex = std::complex<double>;

/// Uniform periodic sampling of a 0-, 1- or 2-d box. Endpoints are excluded,
/// so spacing is length / n on every axis. Points are stored x-major:
/// index = ix * ny + iy.
struct Grid {
  int dim = 0;
  std::vector<int> n;
  std::vector<double> length;

  static Grid point();
  static Grid line(int n, double length);
  static Grid plane(int nx, int ny, double lx, double ly);

  std::size_t size() const;
  double spacing(int axis) const;
  std::vector<double> coordinates(int axis) const;
  void validate() const;

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Signed angular wavenumbers per axis, scaled by 2*pi/L.
struct WavenumberGrid {
  std::vector<std::vector<double>> axes;
};

WavenumberGrid wavenumber_grid(const Grid& grid);

/// Cached FFT machinery for one grid. Instances are immutable after
/// construction and safe to share between threads.
class Transform {
 public:
  explicit Transform(const Grid& grid);
  ~Transform();
  Transform(const Transform&) = delete;
  Transform& operator=(const Transform&) = delete;

  const Grid& grid() const { return grid_; }
  std::size_t size() const { return size_; }

  std::vector<Complex> forward(std::span<const double> values) const;

  /// Inverse transform keeping the real part. The largest discarded
  /// imaginary magnitude is written to `imag_residue` when non-null.
  void inverse(std::span<const Complex> spectrum, std::span<double> out,
               double* imag_residue = nullptr) const;

  /// Fourier multiplier of d^orders[0]/dx ... d^orders[1]/dy. The Nyquist
  /// entry of an axis is zeroed when that axis's order is odd.
  std::vector<Complex> derivative_multiplier(std::span<const int> orders) const;

  /// Multiplier of the inverse Laplacian gamma with Lap(gamma) = -f (zero mode 0).
  std::vector<double> inverse_laplacian_multiplier() const;

  /// 1 where 3|j| < n on every axis, 0 elsewhere.
  const std::vector<double>& dealias_mask() const { return dealias_; }

  /// values -> IFFT(multiplier * FFT(values)).
  void apply(std::span<const double> values, std::span<const Complex> multiplier,
             std::span<double> out, double* imag_residue = nullptr) const;

 private:
  struct Plans;
  Grid grid_;
  std::size_t size_;
  WavenumberGrid k_;
  std::vector<double> dealias_;
  std::unique_ptr<Plans> plans_;
};

/// Shared, lazily built transform for a grid (thread-safe cache).
std::shared_ptr<const Transform> transform_for(const Grid& grid);

/// Spatial derivative of every channel; orders has one entry per axis, total <= 4.
Field spectral_derivative(const Field& f, const Grid& grid, std::span<const int> orders,
                          double* imag_residue = nullptr);

/// gamma with Lap(gamma) = -f on a 2-d grid; the mean of f is discarded.
Field inverse_laplacian_2d(const Field& f, const Grid& grid);

enum class TimeDerivativeMethod { spectral, spectral_detrended, central_fd };

std::string to_string(TimeDerivativeMethod m);
TimeDerivativeMethod parse_time_derivative(const std::string& name);

/// d/dt of a uniformly sampled series.
///  - spectral: periodic transform derivative, exact for band-limited periodic data.
///  - spectral_detrended: removes the line through the first and last samples
///    first, for series that are not time-periodic.
///  - central_fd: second-order central differences, one-sided at the ends.
std::vector<double> temporal_derivative(std::span<const double> series, double dt,
                                        TimeDerivativeMethod method);

}  // namespace snode::spectral
