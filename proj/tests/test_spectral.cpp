#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gen.hpp"
#include "snode/error.hpp"
#include "snode/spectral.hpp"

using namespace snode;
using namespace snode::spectral;
using snode::testing::Gen;
using snode::testing::max_abs_diff;

namespace {

constexpr double kPi = std::numbers::pi;

Field sample(const Grid& g, auto fn) {
  Field f(1, static_cast<Eigen::Index>(g.size()));
  if (g.dim == 1) {
    auto x = g.coordinates(0);
    for (int i = 0; i < g.n[0]; ++i) f(0, i) = fn(x[i], 0.0);
  } else {
    auto x = g.coordinates(0), y = g.coordinates(1);
    for (int i = 0; i < g.n[0]; ++i)
      for (int j = 0; j < g.n[1]; ++j) f(0, i * g.n[1] + j) = fn(x[i], y[j]);
  }
  return f;
}

// random trigonometric polynomial well below Nyquist
Field band_limited(Gen& gen, const Grid& g, int channels) {
  Field f = Field::Zero(channels, static_cast<Eigen::Index>(g.size()));
  for (int c = 0; c < channels; ++c) {
    for (int term = 0; term < 5; ++term) {
      int kx = gen.integer(0, g.n[0] / 3), ky = g.dim == 2 ? gen.integer(0, g.n[1] / 3) : 0;
      double a = gen.normal(), ph = gen.uniform(0, 2 * kPi);
      double wx = 2 * kPi / g.length[0], wy = g.dim == 2 ? 2 * kPi / g.length[1] : 0.0;
      f.row(c) += sample(g, [&](double x, double y) { return a * std::cos(kx * wx * x + ky * wy * y + ph); });
    }
  }
  return f;
}

Grid random_grid(Gen& gen) {
  const int sizes[] = {8, 16, 32, 64};
  if (gen.coin()) return Grid::line(sizes[gen.integer(0, 3)], gen.uniform(0.5, 10.0));
  return Grid::plane(sizes[gen.integer(0, 2)], sizes[gen.integer(0, 2)], gen.uniform(0.5, 10.0),
                     gen.uniform(0.5, 10.0));
}

}  // namespace

TEST(Wavenumbers, UnitDomain) {
  auto k = wavenumber_grid(Grid::line(4, 2 * kPi));
  std::vector<double> want{0, 1, -2, -1};
  ASSERT_EQ(k.axes.size(), 1u);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(k.axes[0][i], want[i], 1e-14);
}

TEST(Wavenumbers, ScaledByLength) {
  auto k = wavenumber_grid(Grid::line(4, 1.0));
  std::vector<double> want{0, 2 * kPi, -4 * kPi, -2 * kPi};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(k.axes[0][i], want[i], 1e-12);
}

TEST(Wavenumbers, SignedOrdering) {
  auto k = wavenumber_grid(Grid::line(8, 2 * kPi));
  EXPECT_NEAR(k.axes[0][5], -3.0, 1e-14);
  EXPECT_EQ(k.axes[0].size(), 8u);
}

TEST(Wavenumbers, RejectsPointGrid) { EXPECT_THROW(wavenumber_grid(Grid::point()), InvalidArgument); }

TEST(SpectralDerivative, FirstDerivativeOfSin3x) {
  Grid g = Grid::line(32, 2 * kPi);
  Field f = sample(g, [](double x, double) { return std::sin(3 * x); });
  Field want = sample(g, [](double x, double) { return 3 * std::cos(3 * x); });
  int ord[] = {1};
  EXPECT_LT(max_abs_diff(spectral_derivative(f, g, ord), want), 1e-10);
}

TEST(SpectralDerivative, SecondDerivativeInX2d) {
  Grid g = Grid::plane(32, 32, 2 * kPi, 2 * kPi);
  Field f = sample(g, [](double x, double y) { return std::sin(x) * std::sin(y); });
  int ord[] = {2, 0};
  EXPECT_LT(max_abs_diff(spectral_derivative(f, g, ord), -f), 1e-10);
}

TEST(SpectralDerivative, FourthOrderUnitLength) {
  Grid g = Grid::line(64, 1.0);
  Field f = sample(g, [](double x, double) { return std::sin(2 * kPi * x); });
  int ord[] = {4};
  Field d = spectral_derivative(f, g, ord);
  const double scale = std::pow(2 * kPi, 4);
  EXPECT_LT(max_abs_diff(d, scale * f) / scale, 1e-9);
}

TEST(SpectralDerivative, RejectsHighOrderAndNonFinite) {
  Grid g = Grid::line(16, 1.0);
  Field f = Field::Ones(1, 16);
  int five[] = {5};
  EXPECT_THROW(spectral_derivative(f, g, five), InvalidArgument);
  f(0, 3) = std::nan("");
  int one[] = {1};
  EXPECT_THROW(spectral_derivative(f, g, one), InvalidArgument);
}

TEST(InverseLaplacian, ProductOfSines) {
  Grid g = Grid::plane(32, 32, 2 * kPi, 2 * kPi);
  Field f = sample(g, [](double x, double y) { return std::sin(x) * std::sin(y); });
  EXPECT_LT(max_abs_diff(inverse_laplacian_2d(f, g), 0.5 * f), 1e-10);
}

TEST(InverseLaplacian, ZeroField) {
  Grid g = Grid::plane(16, 16, 2 * kPi, 2 * kPi);
  Field f = Field::Zero(1, 256);
  EXPECT_EQ(inverse_laplacian_2d(f, g).cwiseAbs().maxCoeff(), 0.0);
}

TEST(InverseLaplacian, Sin2x) {
  Grid g = Grid::plane(16, 16, 2 * kPi, 2 * kPi);
  Field f = sample(g, [](double x, double) { return std::sin(2 * x); });
  EXPECT_LT(max_abs_diff(inverse_laplacian_2d(f, g), 0.25 * f), 1e-12);
}

TEST(TemporalDerivative, SpectralPeriodicSine) {
  const int n = 64;
  const double dt = 1.0 / n;
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) s[i] = std::sin(2 * kPi * i * dt);
  auto d = temporal_derivative(s, dt, TimeDerivativeMethod::spectral);
  for (int i = 0; i < n; ++i) EXPECT_NEAR(d[i], 2 * kPi * std::cos(2 * kPi * i * dt), 1e-9);
}

TEST(TemporalDerivative, ConstantGivesZero) {
  std::vector<double> s(10, 3.5);
  for (auto m : {TimeDerivativeMethod::spectral, TimeDerivativeMethod::spectral_detrended,
                 TimeDerivativeMethod::central_fd}) {
    for (double v : temporal_derivative(s, 0.1, m)) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(TemporalDerivative, CentralDifferencesExactForLinear) {
  const int n = 20;
  const double dt = 1.0 / n;
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) s[i] = i * dt;
  auto d = temporal_derivative(s, dt, TimeDerivativeMethod::central_fd);
  for (double v : d) EXPECT_NEAR(v, 1.0, 1e-10);
}

TEST(TemporalDerivative, CentralDifferencesExactForQuadraticEverywhere) {
  const int n = 11;
  const double dt = 0.1;
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) s[i] = 2.0 * (i * dt) * (i * dt) - (i * dt);
  auto d = temporal_derivative(s, dt, TimeDerivativeMethod::central_fd);
  for (int i = 0; i < n; ++i) EXPECT_NEAR(d[i], 4.0 * i * dt - 1.0, 1e-10);
}

TEST(TemporalDerivative, DetrendedHandlesNonPeriodicLine) {
  const int n = 32;
  const double dt = 0.05;
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) s[i] = 1.0 + 3.0 * i * dt;
  auto d = temporal_derivative(s, dt, TimeDerivativeMethod::spectral_detrended);
  for (double v : d) EXPECT_NEAR(v, 3.0, 1e-9);
}

TEST(TemporalDerivative, RejectsShortSeries) {
  std::vector<double> s{1, 2, 3};
  EXPECT_THROW(temporal_derivative(s, 0.1, TimeDerivativeMethod::central_fd), InvalidArgument);
}

TEST(TemporalDerivative, MethodNames) {
  for (auto m : {TimeDerivativeMethod::spectral, TimeDerivativeMethod::spectral_detrended,
                 TimeDerivativeMethod::central_fd})
    EXPECT_EQ(parse_time_derivative(to_string(m)), m);
  EXPECT_THROW(parse_time_derivative("backward"), InvalidArgument);
}

TEST(SpectralProperties, RoundTrip) {
  Gen gen(101);
  for (int trial = 0; trial < 30; ++trial) {
    Grid g = random_grid(gen);
    Transform tr(g);
    auto v = gen.vec(g.size());
    auto spec = tr.forward(v);
    std::vector<double> back(g.size());
    tr.inverse(spec, back);
    double err = 0, norm = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      err = std::max(err, std::abs(back[i] - v[i]));
      norm = std::max(norm, std::abs(v[i]));
    }
    EXPECT_LT(err / norm, 1e-12);
  }
}

TEST(SpectralProperties, Linearity) {
  Gen gen(102);
  for (int trial = 0; trial < 30; ++trial) {
    Grid g = random_grid(gen);
    Field f = gen.field(2, static_cast<int>(g.size())), h = gen.field(2, static_cast<int>(g.size()));
    double a = gen.normal(), b = gen.normal();
    std::vector<int> ord(g.dim);
    int budget = gen.integer(0, 4);
    for (int ax = 0; ax < g.dim; ++ax) {
      ord[ax] = ax + 1 == g.dim ? budget : gen.integer(0, budget);
      budget -= ord[ax];
    }
    Field lhs = spectral_derivative(a * f + b * h, g, ord);
    Field rhs = a * spectral_derivative(f, g, ord) + b * spectral_derivative(h, g, ord);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff()));
  }
}

TEST(SpectralProperties, CompositionOfFirstDerivatives) {
  Gen gen(103);
  for (int trial = 0; trial < 30; ++trial) {
    Grid g = random_grid(gen);
    Field f = band_limited(gen, g, 1);
    int axis = gen.integer(0, g.dim - 1);
    std::vector<int> one(g.dim, 0), two(g.dim, 0);
    one[axis] = 1;
    two[axis] = 2;
    Field twice = spectral_derivative(spectral_derivative(f, g, one), g, one);
    Field direct = spectral_derivative(f, g, two);
    EXPECT_LT(max_abs_diff(twice, direct), 1e-9 * (1.0 + direct.cwiseAbs().maxCoeff()));
  }
}

TEST(SpectralProperties, InverseLaplacianThenLaplacian) {
  Gen gen(104);
  for (int trial = 0; trial < 20; ++trial) {
    const int sizes[] = {8, 16, 32};
    Grid g = Grid::plane(sizes[gen.integer(0, 2)], sizes[gen.integer(0, 2)], gen.uniform(1, 7), gen.uniform(1, 7));
    Field f = gen.field(1, static_cast<int>(g.size()));
    f.array() -= f.mean();
    Field gamma = inverse_laplacian_2d(f, g);
    int xx[] = {2, 0}, yy[] = {0, 2};
    Field lap = spectral_derivative(gamma, g, xx) + spectral_derivative(gamma, g, yy);
    EXPECT_LT(std::abs(gamma.mean()), 1e-12);
    EXPECT_LT(max_abs_diff(lap, -f), 1e-9);
  }
}

TEST(SpectralProperties, RealSymmetryResidue) {
  Gen gen(105);
  for (int trial = 0; trial < 30; ++trial) {
    Grid g = random_grid(gen);
    Field f = gen.field(1, static_cast<int>(g.size()));
    std::vector<int> ord(g.dim, 0);
    ord[0] = gen.integer(1, 4);
    double residue = -1;
    spectral_derivative(f, g, ord, &residue);
    EXPECT_GE(residue, 0.0);
    EXPECT_LT(residue, 1e-10 * std::pow(2 * kPi * g.n[0] / g.length[0], ord[0]));
  }
}
