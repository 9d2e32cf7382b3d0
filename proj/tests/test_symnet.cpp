#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gen.hpp"
#include "oracles.hpp"
#include "snode/error.hpp"
#include "snode/symnet.hpp"

using namespace snode;
using namespace snode::symnet;
using snode::testing::Gen;
using snode::testing::max_abs_diff;
using snode::testing::Real;

namespace {

constexpr double kPi = std::numbers::pi;

// all multi-indices of d axes with total order <= q, counted directly
std::size_t brute_force_size(int d, int d_s, int d_u, int q) {
  std::size_t count = 0;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  for (;;) {
    int total = 0;
    for (int v : idx) total += v;
    if (total <= q) ++count;
    int a = 0;
    while (a < d && ++idx[a] > q) idx[a++] = 0;
    if (a == d) break;
  }
  return count * static_cast<std::size_t>(d_s) + static_cast<std::size_t>(d_u);
}

// -s^2 + u on dictionary [u, s]
SymNetParams quadratic_net() {
  SymNetParams p(1, 2, 1);
  p.weight(1) << 0, 1, 0, 1;
  p.output_weight() << -1, 1, 0;
  return p;
}

SymNetParams random_net(Gen& gen, int K, int n, int outputs, double sd) {
  SymNetParams p(K, n, outputs);
  for (auto& v : p.values()) v = gen.normal(sd);
  return p;
}

std::vector<Real> column(const RowMatrix& m, Eigen::Index c) {
  std::vector<Real> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

}  // namespace

TEST(DictionarySize, Examples) {
  EXPECT_EQ(dictionary_size(1, 1, 1, 4), 6u);
  EXPECT_EQ(dictionary_size(2, 1, 1, 2), 7u);
  EXPECT_EQ(dictionary_size(3, 1, 1, 4), 36u);
  EXPECT_EQ(dictionary_size(0, 2, 1, 0), 3u);
  EXPECT_THROW(dictionary_size(4, 1, 1, 1), InvalidArgument);
  EXPECT_THROW(dictionary_size(1, 1, 1, 5), InvalidArgument);
}

TEST(DictionarySize, MatchesEnumeration) {
  for (int d = 1; d <= 3; ++d)
    for (int q = 0; q <= 4; ++q)
      for (int ds = 1; ds <= 2; ++ds)
        for (int du = 1; du <= 2; ++du)
          EXPECT_EQ(dictionary_size(d, ds, du, q), brute_force_size(d, ds, du, q))
              << "d=" << d << " q=" << q << " ds=" << ds << " du=" << du;
}

TEST(DictionarySpec, CanonicalLabels) {
  DictionarySpec s{2, 1, 1, 2, false};
  EXPECT_EQ(s.labels(), (std::vector<std::string>{"u", "s", "s_x", "s_y", "s_xx", "s_xy", "s_yy"}));
  DictionarySpec ns{2, 1, 1, 1, true};
  EXPECT_EQ(ns.labels(), (std::vector<std::string>{"u", "s", "s_x", "s_y", "gamma_x", "gamma_y"}));
  EXPECT_EQ(ns.size(), 6u);
  DictionarySpec hopf{0, 2, 1, 0, false};
  EXPECT_EQ(hopf.labels(), (std::vector<std::string>{"u", "s1", "s2"}));
  DictionarySpec bad{1, 1, 1, 1, true};
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(BuildDictionary, PointGridConcatenates) {
  Field s(2, 1), u(1, 1);
  s << 0.3, -0.7;
  u << 1.5;
  auto d = build_dictionary(s, u, Grid::point(), DictionarySpec{0, 2, 1, 0, false});
  ASSERT_EQ(d.rows(), 3);
  EXPECT_EQ(d(0, 0), 1.5);
  EXPECT_EQ(d(1, 0), 0.3);
  EXPECT_EQ(d(2, 0), -0.7);
}

TEST(BuildDictionary, SineDerivatives) {
  Grid g = Grid::line(32, 2 * kPi);
  auto x = g.coordinates(0);
  Field s(1, 32), u = Field::Constant(1, 32, 0.25);
  for (int i = 0; i < 32; ++i) s(0, i) = std::sin(x[i]);
  auto d = build_dictionary(s, u, g, DictionarySpec{1, 1, 1, 2, false});
  ASSERT_EQ(d.rows(), 4);
  for (int i = 0; i < 32; ++i) {
    EXPECT_EQ(d(0, i), 0.25);
    EXPECT_NEAR(d(1, i), std::sin(x[i]), 1e-15);
    EXPECT_NEAR(d(2, i), std::cos(x[i]), 1e-12);
    EXPECT_NEAR(d(3, i), -std::sin(x[i]), 1e-12);
  }
}

TEST(BuildDictionary, ZeroStateKeepsForcing) {
  Grid g = Grid::plane(8, 8, 1.0, 1.0);
  Gen gen(501);
  Field u = gen.field(1, 64);
  auto d = build_dictionary(Field::Zero(1, 64), u, g, DictionarySpec{2, 1, 1, 2, true});
  EXPECT_TRUE(d.row(0) == u.row(0));
  EXPECT_EQ(d.bottomRows(d.rows() - 1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BuildDictionary, StreamVelocities) {
  Grid g = Grid::plane(16, 16, 2 * kPi, 2 * kPi);
  auto x = g.coordinates(0), y = g.coordinates(1);
  Field s(1, 256);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) s(0, i * 16 + j) = std::sin(x[i]) * std::sin(y[j]);
  auto d = build_dictionary(s, Field::Zero(1, 256), g, DictionarySpec{2, 1, 1, 0, true});
  ASSERT_EQ(d.rows(), 4);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      EXPECT_NEAR(d(2, i * 16 + j), 0.5 * std::cos(x[i]) * std::sin(y[j]), 1e-12);
      EXPECT_NEAR(d(3, i * 16 + j), 0.5 * std::sin(x[i]) * std::cos(y[j]), 1e-12);
    }
}

TEST(BuildDictionary, RejectsShapeMismatch) {
  Grid g = Grid::line(8, 1.0);
  EXPECT_THROW(build_dictionary(Field::Zero(1, 7), Field::Zero(1, 8), g, DictionarySpec{1, 1, 1, 1, false}),
               InvalidArgument);
}

TEST(DictionaryProperties, StateAdjointIsTranspose) {
  Gen gen(502);
  for (int trial = 0; trial < 30; ++trial) {
    const bool two_d = gen.coin();
    Grid g = two_d ? Grid::plane(8, 16, gen.uniform(1, 5), gen.uniform(1, 5)) : Grid::line(16, gen.uniform(1, 5));
    DictionarySpec spec{g.dim, two_d ? 1 : gen.integer(1, 2), 1, gen.integer(0, two_d ? 2 : 4), two_d && gen.coin()};
    DictionaryBuilder b(spec, g);
    const int pts = static_cast<int>(g.size());
    Field s = gen.field(spec.state_channels, pts), u = Field::Zero(1, pts);
    RowMatrix d;
    b.build(s, u, d);
    RowMatrix G = gen.field(static_cast<int>(spec.size()), pts);
    Field gs;
    b.state_adjoint(G, gs);
    const double lhs = (G.array() * d.array()).sum(), rhs = (gs.array() * s.array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * (std::abs(lhs) + 1));
  }
}

TEST(SymNetForward, ZeroNetwork) {
  Gen gen(503);
  SymNetParams p(3, 4, 2);
  auto out = symnet_forward(p, gen.field(4, 10));
  EXPECT_EQ(out.rows(), 2);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SymNetForward, HandBuiltQuadratic) {
  auto p = quadratic_net();
  RowMatrix dict(2, 3);
  dict << 1.0, 0.0, -2.0, 1.0, 0.5, 3.0;
  auto out = symnet_forward(p, dict);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out(0, 1), -0.25);
  EXPECT_DOUBLE_EQ(out(0, 2), -11.0);
}

TEST(SymNetForward, CubicWithTwoLayers) {
  SymNetParams p(2, 2, 1);
  p.weight(1) << 0, 1, 0, 1;     // p1 = s * s
  p.weight(2) << 1, 0, 0, 0, 0, 1;  // p2 = p1 * s
  p.output_weight() << 1, 0, 0, 0;
  RowMatrix dict(2, 1);
  dict << 0.0, -1.5;
  EXPECT_DOUBLE_EQ(symnet_forward(p, dict)(0, 0), -3.375);
  auto e = extract_equation(p, DictionarySpec{0, 1, 1, 0, false}, 1e-8);
  ASSERT_EQ(e[0].terms.size(), 1u);
  EXPECT_DOUBLE_EQ(e[0].coefficient("s·s·s"), 1.0);
}

TEST(SymNetForward, OverflowReportsLayer) {
  SymNetParams p(3, 1, 1);
  for (int k = 1; k <= 3; ++k) {
    p.weight(k).setConstant(1e3);
  }
  RowMatrix dict = RowMatrix::Constant(1, 1, 10.0);
  try {
    symnet_forward(p, dict);
    FAIL() << "expected overflow";
  } catch (const OverflowError& e) {
    EXPECT_GE(e.layer(), 1);
    EXPECT_LE(e.layer(), 4);
  }
}

TEST(SymNetVjp, ZeroUpstream) {
  Gen gen(504);
  auto p = random_net(gen, 3, 3, 2, 0.5);
  RowMatrix dict = gen.field(3, 5);
  std::vector<double> g(p.size(), 0.0);
  RowMatrix gd;
  symnet_vjp(p, dict, RowMatrix::Zero(2, 5), g, &gd);
  for (double v : g) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(gd.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SymNetVjp, SingleLayerByHand) {
  // one input x: psi = a x + b1, phi = c x + b2, out = w psi phi + v x + b
  const double a = 0.3, c = -1.2, b1 = 0.4, b2 = 0.9, w = 2.0, v = 0.5, x = 1.7;
  SymNetParams p(1, 1, 1);
  p.weight(1) << a, c;
  p.bias(1) << b1, b2;
  p.output_weight() << w, v;
  p.output_bias() << 0.1;
  RowMatrix dict = RowMatrix::Constant(1, 1, x);
  std::vector<double> g(p.size(), 0.0);
  RowMatrix gd;
  symnet_vjp(p, dict, RowMatrix::Ones(1, 1), g, &gd);
  const double psi = a * x + b1, phi = c * x + b2;
  std::vector<double> want{w * phi * x, w * psi * x, w * phi, w * psi, psi * phi, x, 1.0};
  ASSERT_EQ(g.size(), want.size());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], want[i], 1e-14) << i;
  EXPECT_NEAR(gd(0, 0), w * (a * phi + c * psi) + v, 1e-14);
}

TEST(SymNetProperties, VjpMatchesFiniteDifferences) {
  Gen gen(505);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = gen.integer(1, 3), n = gen.integer(1, 6), outs = gen.integer(1, 2), cols = gen.integer(1, 4);
    auto p = random_net(gen, K, n, outs, 0.7);
    RowMatrix dict = gen.field(n, cols), up = gen.field(outs, cols);
    std::vector<double> g(p.size(), 0.0);
    RowMatrix gd;
    symnet_vjp(p, dict, up, g, &gd);
    // extended-precision oracle, loss = <up, out>
    auto loss_at = [&](std::span<const double> theta, const RowMatrix& dd) {
      Real total = 0;
      for (int c = 0; c < cols; ++c) {
        auto o = snode::testing::ref_symnet(theta, K, n, outs, column(dd, c));
        for (int r = 0; r < outs; ++r) total += o[r] * up(r, c);
      }
      return total;
    };
    std::vector<double> theta(p.values().begin(), p.values().end());
    const Real base = loss_at(theta, dict);
    const double eps = 1e-6;
    double worst = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      auto t = theta;
      t[i] += eps;
      const Real hi = loss_at(t, dict) - base;
      t[i] -= 2 * eps;
      const Real lo = loss_at(t, dict) - base;
      const double fd = static_cast<double>((hi - lo) / (2 * eps));
      worst = std::max(worst, std::abs(fd - g[i]) / (std::max(std::abs(fd), std::abs(g[i])) + 1e-12));
    }
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < cols; ++c) {
        RowMatrix dd = dict;
        dd(r, c) += eps;
        const Real hi = loss_at(theta, dd) - base;
        dd(r, c) -= 2 * eps;
        const Real lo = loss_at(theta, dd) - base;
        const double fd = static_cast<double>((hi - lo) / (2 * eps));
        worst = std::max(worst, std::abs(fd - gd(r, c)) / (std::max(std::abs(fd), std::abs(gd(r, c))) + 1e-12));
      }
    EXPECT_LT(worst, 1e-6) << "trial " << trial;
  }
}

TEST(SymNetProperties, ForwardMatchesReferenceImplementation) {
  Gen gen(506);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = gen.integer(1, 4), n = gen.integer(1, 6), outs = gen.integer(1, 2);
    auto p = random_net(gen, K, n, outs, 0.5);
    RowMatrix dict = gen.field(n, 3);
    auto out = symnet_forward(p, dict);
    for (int c = 0; c < 3; ++c) {
      auto ref = snode::testing::ref_symnet(p.values(), K, n, outs, column(dict, c));
      for (int r = 0; r < outs; ++r) EXPECT_NEAR(out(r, c), static_cast<double>(ref[r]), 1e-12);
    }
  }
}

TEST(Extraction, HandBuiltQuadratic) {
  auto e = extract_equation(quadratic_net(), DictionarySpec{0, 1, 1, 0, false}, 1e-8);
  ASSERT_EQ(e.size(), 1u);
  ASSERT_EQ(e[0].terms.size(), 2u);
  EXPECT_DOUBLE_EQ(e[0].coefficient("s·s"), -1.0);
  EXPECT_DOUBLE_EQ(e[0].coefficient("u"), 1.0);
  EXPECT_EQ(e[0].coefficient("s"), 0.0);
}

TEST(Extraction, ZeroNetworkIsEmpty) {
  auto e = extract_equation(SymNetParams(2, 3, 1), DictionarySpec{1, 1, 1, 1, false}, 0.0);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_TRUE(e[0].terms.empty());
}

TEST(Extraction, ThresholdDropsSmallTerms) {
  auto p = quadratic_net();
  p.output_weight()(0, 1) = 1e-4;
  auto e = extract_equation(p, DictionarySpec{0, 1, 1, 0, false}, 1e-3);
  ASSERT_EQ(e[0].terms.size(), 1u);
  EXPECT_EQ(e[0].terms[0].label, "s·s");
}

TEST(Extraction, CapAbortsHugeExpansions) {
  Gen gen(507);
  DictionarySpec spec{2, 2, 1, 4, false};
  auto p = random_net(gen, 3, static_cast<int>(spec.size()), 2, 0.5);
  EXPECT_THROW(extract_equation(p, spec, 0.0), Error);
}

TEST(SymNetProperties, ExpansionMatchesForward) {
  Gen gen(508);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = gen.integer(1, 3), n = gen.integer(1, 6);
    auto p = random_net(gen, K, n, 1, 0.6);
    DictionarySpec spec{0, n - 1 > 0 ? n - 1 : 1, n - 1 > 0 ? 1 : 0, 0, false};
    ASSERT_EQ(spec.size(), static_cast<std::size_t>(n));
    auto e = extract_equation(p, spec, 0.0);
    for (int probe = 0; probe < 5; ++probe) {
      RowMatrix dict = gen.field(n, 1);
      const double want = symnet_forward(p, dict)(0, 0);
      std::vector<double> sym(dict.data(), dict.data() + n);
      const double got = evaluate_expression(e[0], sym);
      EXPECT_NEAR(got, want, 1e-9 * std::max(1.0, std::abs(want))) << "trial " << trial;
    }
    for (const auto& t : e[0].terms) EXPECT_LE(t.monomial.size(), std::size_t{1} << K);
  }
}

TEST(SymNetProperties, PermutationConsistency) {
  Gen gen(509);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = gen.integer(1, 3), n = gen.integer(2, 6), outs = gen.integer(1, 2);
    auto p = random_net(gen, K, n, outs, 0.5);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), gen.rng);
    RowMatrix dict = gen.field(n, 4), pd(n, 4);
    for (int i = 0; i < n; ++i) pd.row(i) = dict.row(perm[i]);
    // dictionary columns sit after the k-1 product columns in every layer
    SymNetParams q = p;
    for (int k = 1; k <= K; ++k)
      for (int i = 0; i < n; ++i) q.weight(k).col(k - 1 + i) = p.weight(k).col(k - 1 + perm[i]);
    for (int i = 0; i < n; ++i) q.output_weight().col(K + i) = p.output_weight().col(K + perm[i]);
    EXPECT_LT(max_abs_diff(symnet_forward(p, dict), symnet_forward(q, pd)), 1e-12);
  }
}

TEST(SymNetParams, LayoutAndPenalty) {
  SymNetParams p(2, 3, 1);
  EXPECT_EQ(p.size(), (2u * 3 + 2) + (2u * 4 + 2) + (1u * 5 + 1));
  EXPECT_EQ(p.weight_offset(2), 8u);
  EXPECT_EQ(p.output_offset(), 18u);
  for (std::size_t i = 0; i < p.size(); ++i) p.values()[i] = (i % 2 ? -1.0 : 2.0) * (i == 5 ? 0.0 : 1.0);
  double want = 0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) want += std::abs(p.values()[i]);
  EXPECT_DOUBLE_EQ(l1_penalty(p, 0.01), 0.01 * want);
  std::vector<double> g(p.size(), 0.0);
  add_l1_subgradient(p, 0.5, g);
  EXPECT_EQ(g[5], 0.0);
  EXPECT_EQ(g[0], 0.5);
  EXPECT_EQ(g[1], -0.5);
  EXPECT_EQ(g.back(), 0.0);
}

TEST(SymNetParams, RandomInitScale) {
  std::mt19937_64 rng(5);
  auto p = SymNetParams::random(3, 10, 1, rng, 0.01);
  double ss = 0;
  int count = 0;
  for (int k = 1; k <= 3; ++k) {
    EXPECT_EQ(p.bias(k).cwiseAbs().maxCoeff(), 0.0);
    ss += p.weight(k).squaredNorm();
    count += static_cast<int>(p.weight(k).size());
  }
  EXPECT_NEAR(std::sqrt(ss / count), 0.01, 0.003);
}
