#include "snode/systems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include <fmt/core.h>

#include "snode/error.hpp"
#include "snode/parallel.hpp"
#include "snode/rng.hpp"

namespace snode::systems {

using spectral::Complex;
using spectral::Transform;

std::string to_string(SystemId id) {
  switch (id) {
    case SystemId::ode_nonlinear: return "ode_nonlinear";
    case SystemId::saddle_node: return "saddle_node";
    case SystemId::pitchfork: return "pitchfork";
    case SystemId::hopf: return "hopf";
    case SystemId::dr: return "dr";
    case SystemId::ks: return "ks";
    case SystemId::ns: return "ns";
  }
  return "?";
}

SystemId parse_system(const std::string& name) {
  for (auto id : {SystemId::ode_nonlinear, SystemId::saddle_node, SystemId::pitchfork, SystemId::hopf, SystemId::dr,
                  SystemId::ks, SystemId::ns})
    if (to_string(id) == name) return id;
  throw InvalidArgument("unknown system '" + name + "'");
}

std::string to_string(ForcingTemplate f) {
  switch (f) {
    case ForcingTemplate::none: return "none";
    case ForcingTemplate::dr_ramp: return "dr_ramp";
    case ForcingTemplate::ks_ramp: return "ks_ramp";
    case ForcingTemplate::ns_wave: return "ns_wave";
  }
  return "?";
}

ForcingTemplate parse_forcing(const std::string& name) {
  for (auto f : {ForcingTemplate::none, ForcingTemplate::dr_ramp, ForcingTemplate::ks_ramp, ForcingTemplate::ns_wave})
    if (to_string(f) == name) return f;
  throw InvalidArgument("unknown forcing template '" + name + "'");
}

std::string to_string(InitialCondition::Kind k) {
  switch (k) {
    case InitialCondition::Kind::uniform: return "uniform";
    case InitialCondition::Kind::modes: return "modes";
    case InitialCondition::Kind::fixed: return "fixed";
  }
  return "?";
}

InitialCondition::Kind parse_initial_kind(const std::string& name) {
  if (name == "uniform") return InitialCondition::Kind::uniform;
  if (name == "modes") return InitialCondition::Kind::modes;
  if (name == "fixed") return InitialCondition::Kind::fixed;
  throw InvalidArgument("unknown initial condition kind '" + name + "'");
}

SystemSpec SystemSpec::defaults(SystemId id) {
  SystemSpec s;
  s.id = id;
  switch (id) {
    case SystemId::ode_nonlinear:
    case SystemId::hopf:
      break;
    case SystemId::saddle_node:
      s.theta1 = 2.5;
      s.theta2 = -1.0;
      break;
    case SystemId::pitchfork:
      s.theta1 = 0.5;
      s.theta2 = -1.0;
      break;
    case SystemId::dr:
      s.forcing = ForcingTemplate::dr_ramp;
      break;
    case SystemId::ks:
      s.forcing = ForcingTemplate::ks_ramp;
      break;
    case SystemId::ns:
      s.forcing = ForcingTemplate::ns_wave;
      break;
  }
  return s;
}

int SystemSpec::spatial_dim() const {
  switch (id) {
    case SystemId::dr:
    case SystemId::ks: return 1;
    case SystemId::ns: return 2;
    default: return 0;
  }
}

int SystemSpec::state_channels() const { return id == SystemId::hopf ? 2 : 1; }

int SystemSpec::derivative_order() const {
  switch (id) {
    case SystemId::dr: return 2;
    case SystemId::ks: return 4;
    case SystemId::ns: return 2;
    default: return 0;
  }
}

Field forcing_field(const SystemSpec& spec, const Grid& grid, std::span<const double> u_values) {
  if (u_values.empty()) throw InvalidArgument("forcing needs at least one parameter value");
  const double u1 = u_values[0];
  Field u(1, static_cast<Eigen::Index>(grid.size()));
  switch (spec.forcing) {
    case ForcingTemplate::none:
      u.setConstant(u1);
      break;
    case ForcingTemplate::dr_ramp:
    case ForcingTemplate::ks_ramp: {
      if (grid.dim != 1) throw InvalidArgument("ramp forcing needs a 1-d grid");
      const auto x = grid.coordinates(0);
      const double slope = spec.forcing == ForcingTemplate::dr_ramp ? std::numbers::pi / 5.0 : 1.0 / 16.0;
      for (std::size_t i = 0; i < x.size(); ++i) u(0, static_cast<Eigen::Index>(i)) = slope * x[i] + u1;
      break;
    }
    case ForcingTemplate::ns_wave: {
      if (grid.dim != 2) throw InvalidArgument("wave forcing needs a 2-d grid");
      const auto x = grid.coordinates(0);
      const auto y = grid.coordinates(1);
      const double tau = 2.0 * std::numbers::pi;
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) {
          const double ph = tau * (x[i] + y[j]);
          u(0, static_cast<Eigen::Index>(i * y.size() + j)) = u1 * (0.1 * std::sin(ph) + std::cos(ph));
        }
      break;
    }
  }
  return u;
}

ode::ForcingFn make_forcing(const SystemSpec& spec, const Grid& grid, const grf::ParamFunction& pf) {
  return [spec, grid, pf](double t) {
    const auto v = pf(t);
    return forcing_field(spec, grid, v);
  };
}

namespace {

void check_shapes(const SystemSpec& spec, const Field& s, const Field& u, const Grid& grid) {
  if (grid.dim != spec.spatial_dim())
    throw InvalidArgument(fmt::format("{} expects a {}-d grid", to_string(spec.id), spec.spatial_dim()));
  const auto points = static_cast<Eigen::Index>(grid.size());
  if (s.rows() != spec.state_channels() || s.cols() != points)
    throw InvalidArgument(fmt::format("state shape {}x{} does not match {} ({}x{})", s.rows(), s.cols(),
                                      to_string(spec.id), spec.state_channels(), points));
  if (u.rows() != spec.param_channels() || u.cols() != points)
    throw InvalidArgument("forcing shape does not match the grid");
}

Field derivative(const Field& s, const Grid& grid, std::initializer_list<int> orders) {
  const std::vector<int> o(orders);
  return spectral::spectral_derivative(s, grid, o);
}

}  // namespace

Field true_rhs(const SystemSpec& spec, const Field& s, const Field& u, double, const Grid& grid) {
  check_shapes(spec, s, u, grid);
  Field out(s.rows(), s.cols());
  const auto sa = s.array();
  switch (spec.id) {
    case SystemId::ode_nonlinear:
      out = (-sa.square() + u.array()).matrix();
      break;
    case SystemId::saddle_node:
      out = (u.array() + spec.theta1 * sa + spec.theta2 * sa.cube()).matrix();
      break;
    case SystemId::pitchfork:
      out = (spec.theta1 + u.array() * sa + spec.theta2 * sa.cube()).matrix();
      break;
    case SystemId::hopf: {
      const double s1 = s(0, 0), s2 = s(1, 0), uu = u(0, 0);
      const double r2 = s1 * s1 + s2 * s2;
      out(0, 0) = uu * s1 - s2 - s1 * r2;
      out(1, 0) = s1 + uu * s2 - s2 * r2;
      break;
    }
    case SystemId::dr: {
      const Field sxx = derivative(s, grid, {2});
      out = (spec.diffusion * sxx.array() + spec.reaction * sa.square() + u.array()).matrix();
      break;
    }
    case SystemId::ks: {
      const Field sx = derivative(s, grid, {1});
      const Field sxx = derivative(s, grid, {2});
      const Field sxxxx = derivative(s, grid, {4});
      out = (-sa * sx.array() - sxx.array() - u.array() * sxxxx.array()).matrix();
      break;
    }
    case SystemId::ns: {
      const Field gamma = spectral::inverse_laplacian_2d(s, grid);
      const Field gx = derivative(gamma, grid, {1, 0});
      const Field gy = derivative(gamma, grid, {0, 1});
      const Field sx = derivative(s, grid, {1, 0});
      const Field sy = derivative(s, grid, {0, 1});
      const Field lap = derivative(s, grid, {2, 0}) + derivative(s, grid, {0, 2});
      out = (gx.array() * sy.array() - gy.array() * sx.array() + spec.viscosity * lap.array() + u.array()).matrix();
      break;
    }
  }
  return out;
}

ode::VectorField true_vector_field(const SystemSpec& spec, const Grid& grid) {
  return [spec, grid](double t, const Field& s, const Field& u, Field& out) { out = true_rhs(spec, s, u, t, grid); };
}

double default_pde_dt(SystemId id) {
  switch (id) {
    case SystemId::ks: return 1e-3;
    case SystemId::dr: return 1e-3;
    case SystemId::ns: return 5e-4;
    default: return 0.0;
  }
}

std::vector<double> GenConfig::output_times() const {
  std::vector<double> t(static_cast<std::size_t>(n_times));
  const double h = (t1 - t0) / (n_times - 1);
  for (int i = 0; i < n_times; ++i) t[i] = t0 + h * i;
  t.back() = t1;
  return t;
}

void GenConfig::validate(const SystemSpec& spec) const {
  if (n_trajectories < 1) throw InvalidArgument("need at least one trajectory");
  if (n_times < 8) throw InvalidArgument("need at least 8 output times");
  if (!(t1 > t0)) throw InvalidArgument("time span must be increasing");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidArgument("tolerances must be positive");
  if (pde_dt < 0.0) throw InvalidArgument("pde dt must be non-negative");
  if (noise < 0.0) throw InvalidArgument("noise level must be non-negative");
  if (refine < 1) throw InvalidArgument("refine factor must be at least 1");
  if (refine > 1 && spec.spatial_dim() == 0) throw InvalidArgument("refine applies to PDE systems only");
  if (grf.length_scale.lo <= 0.0 || grf.length_scale.hi < grf.length_scale.lo)
    throw InvalidArgument("GRF length scale range must be positive and ordered");
  if (grf.output_scale.hi < grf.output_scale.lo) throw InvalidArgument("GRF output scale range must be ordered");
  grid.validate();
  if (grid.dim != spec.spatial_dim())
    throw InvalidArgument(fmt::format("{} needs a {}-d grid", to_string(spec.id), spec.spatial_dim()));
}

namespace {

using Spectrum = std::vector<Complex>;

// Pseudospectral semi-discretization v' = L v + N(v, t) in Fourier space.
class PseudoSpectral {
 public:
  PseudoSpectral(const SystemSpec& spec, const Grid& grid, const ode::ForcingFn& forcing)
      : spec_(spec), grid_(grid), forcing_(forcing), tr_(spectral::transform_for(grid)), n_(grid.size()) {
    const auto& mask = tr_->dealias_mask();
    mask_ = mask;
    if (grid.dim == 1) {
      dx_ = tr_->derivative_multiplier(std::vector<int>{1});
      dxx_ = tr_->derivative_multiplier(std::vector<int>{2});
      dxxxx_ = tr_->derivative_multiplier(std::vector<int>{4});
    } else {
      dx_ = tr_->derivative_multiplier(std::vector<int>{1, 0});
      dy_ = tr_->derivative_multiplier(std::vector<int>{0, 1});
      const auto a = tr_->derivative_multiplier(std::vector<int>{2, 0});
      const auto b = tr_->derivative_multiplier(std::vector<int>{0, 2});
      lap_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) lap_[i] = a[i] + b[i];
      inv_lap_ = tr_->inverse_laplacian_multiplier();
    }
  }

  // Diagonal linear operator at time t (frozen over one step).
  std::vector<double> linear(double t) const {
    std::vector<double> l(n_);
    switch (spec_.id) {
      case SystemId::dr:
        for (std::size_t i = 0; i < n_; ++i) l[i] = spec_.diffusion * dxx_[i].real();
        break;
      case SystemId::ks: {
        const double ubar = forcing_(t).mean();
        for (std::size_t i = 0; i < n_; ++i) l[i] = -dxx_[i].real() - ubar * dxxxx_[i].real();
        break;
      }
      case SystemId::ns:
        for (std::size_t i = 0; i < n_; ++i) l[i] = spec_.viscosity * lap_[i].real();
        break;
      default:
        break;
    }
    return l;
  }

  Spectrum nonlinear(const Spectrum& v, double t, double ubar) const {
    const Field u = forcing_(t);
    std::vector<double> s(n_), prod(n_, 0.0);
    tr_->inverse(v, s);
    switch (spec_.id) {
      case SystemId::dr:
        for (std::size_t i = 0; i < n_; ++i) prod[i] = spec_.reaction * s[i] * s[i];
        break;
      case SystemId::ks: {
        const auto sx = physical(v, dx_);
        const auto s4 = physical(v, dxxxx_);
        for (std::size_t i = 0; i < n_; ++i)
          prod[i] = -s[i] * sx[i] - (u(0, static_cast<Eigen::Index>(i)) - ubar) * s4[i];
        break;
      }
      case SystemId::ns: {
        Spectrum g(n_);
        for (std::size_t i = 0; i < n_; ++i) g[i] = v[i] * inv_lap_[i];
        const auto gx = physical(g, dx_);
        const auto gy = physical(g, dy_);
        const auto sx = physical(v, dx_);
        const auto sy = physical(v, dy_);
        for (std::size_t i = 0; i < n_; ++i) prod[i] = gx[i] * sy[i] - gy[i] * sx[i];
        break;
      }
      default:
        break;
    }
    auto np = tr_->forward(prod);
    for (std::size_t i = 0; i < n_; ++i) np[i] *= mask_[i];
    if (spec_.id != SystemId::ks) {
      // additive forcing
      const auto uf = tr_->forward({u.data(), n_});
      for (std::size_t i = 0; i < n_; ++i) np[i] += uf[i];
    }
    return np;
  }

  double mean_forcing(double t) const { return spec_.id == SystemId::ks ? forcing_(t).mean() : 0.0; }

  const Transform& transform() const { return *tr_; }

 private:
  std::vector<double> physical(const Spectrum& v, const Spectrum& mult) const {
    Spectrum w(n_);
    for (std::size_t i = 0; i < n_; ++i) w[i] = v[i] * mult[i];
    std::vector<double> out(n_);
    tr_->inverse(w, out);
    return out;
  }

  SystemSpec spec_;
  Grid grid_;
  ode::ForcingFn forcing_;
  std::shared_ptr<const Transform> tr_;
  std::size_t n_;
  std::vector<double> mask_;
  Spectrum dx_, dy_, dxx_, dxxxx_, lap_;
  std::vector<double> inv_lap_;
};

void check_blowup(const Field& s, double t) {
  if (!s.allFinite()) throw BlowUpError(fmt::format("state became non-finite at t = {}", t), t);
  if (s.cwiseAbs().maxCoeff() > kBlowUpThreshold)
    throw BlowUpError(fmt::format("max |s| exceeded {:g} at t = {}", kBlowUpThreshold, t), t);
}

std::vector<Field> integrate_pde(const SystemSpec& spec, const Grid& grid, const Field& s0,
                                 const ode::ForcingFn& forcing, std::span<const double> times, double dt) {
  PseudoSpectral ps(spec, grid, forcing);
  const auto& tr = ps.transform();
  const std::size_t n = grid.size();
  Spectrum v = tr.forward({s0.data(), n});
  std::vector<Field> out;
  out.reserve(times.size());
  double t = times.front();
  out.push_back(s0);
  Spectrum a(n), b(n), c(n), w(n);
  std::vector<double> e(n), e2(n);
  for (std::size_t j = 1; j < times.size(); ++j) {
    const double interval = times[j] - times[j - 1];
    const int steps = std::max(1, static_cast<int>(std::ceil(interval / dt - 1e-9)));
    const double h = interval / steps;
    for (int k = 0; k < steps; ++k) {
      const auto l = ps.linear(t);
      const double ubar = ps.mean_forcing(t);
      for (std::size_t i = 0; i < n; ++i) {
        e[i] = std::exp(0.5 * h * l[i]);
        e2[i] = e[i] * e[i];
      }
      const Spectrum k1 = ps.nonlinear(v, t, ubar);
      for (std::size_t i = 0; i < n; ++i) w[i] = e[i] * (v[i] + 0.5 * h * k1[i]);
      const Spectrum k2 = ps.nonlinear(w, t + 0.5 * h, ubar);
      for (std::size_t i = 0; i < n; ++i) w[i] = e[i] * v[i] + 0.5 * h * k2[i];
      const Spectrum k3 = ps.nonlinear(w, t + 0.5 * h, ubar);
      for (std::size_t i = 0; i < n; ++i) w[i] = e2[i] * v[i] + h * e[i] * k3[i];
      const Spectrum k4 = ps.nonlinear(w, t + h, ubar);
      for (std::size_t i = 0; i < n; ++i)
        v[i] = e2[i] * v[i] + (h / 6.0) * (e2[i] * k1[i] + 2.0 * e[i] * (k2[i] + k3[i]) + k4[i]);
      t = (k + 1 == steps) ? times[j] : t + h;
    }
    Field s(1, static_cast<Eigen::Index>(n));
    tr.inverse(v, {s.data(), n});
    check_blowup(s, t);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Trajectory generate_trajectory(const SystemSpec& spec, const Grid& grid, const Field& s0,
                               const grf::ParamFunction& pf, std::span<const double> times, double rtol,
                               double atol, double pde_dt) {
  if (times.size() < 2) throw InvalidArgument("need at least two output times");
  Trajectory tr;
  tr.times.assign(times.begin(), times.end());
  tr.param = pf;
  tr.knot_times = pf.times();
  tr.knot_values = pf.values(0);
  const auto forcing = make_forcing(spec, grid, pf);
  if (spec.spatial_dim() == 0) {
    ode::SolveConfig cfg;
    cfg.method = ode::Method::dopri5;
    cfg.rtol = rtol;
    cfg.atol = atol;
    cfg.blowup_threshold = kBlowUpThreshold;
    auto sol = ode::ode_solve(true_vector_field(spec, grid), s0, times.front(), times, forcing, cfg);
    tr.states = std::move(sol.states);
  } else {
    const double dt = pde_dt > 0.0 ? pde_dt : default_pde_dt(spec.id);
    tr.states = integrate_pde(spec, grid, s0, forcing, times, dt);
  }
  return tr;
}

Field sample_initial(const SystemSpec& spec, const Grid& grid, const InitialCondition& ic, std::uint64_t seed) {
  const auto points = static_cast<Eigen::Index>(grid.size());
  const Eigen::Index channels = spec.state_channels();
  Field s(channels, points);
  auto rng = make_rng(seed);
  switch (ic.kind) {
    case InitialCondition::Kind::uniform: {
      std::uniform_real_distribution<double> dist(ic.range.lo, ic.range.hi);
      for (Eigen::Index c = 0; c < channels; ++c)
        for (Eigen::Index p = 0; p < points; ++p) s(c, p) = dist(rng);
      break;
    }
    case InitialCondition::Kind::fixed: {
      const auto n = ic.values.size();
      if (n == static_cast<std::size_t>(channels)) {
        for (Eigen::Index c = 0; c < channels; ++c) s.row(c).setConstant(ic.values[c]);
      } else if (n == static_cast<std::size_t>(channels * points)) {
        for (Eigen::Index i = 0; i < channels * points; ++i) s.data()[i] = ic.values[i];
      } else {
        throw InvalidArgument("fixed initial condition needs one value per channel or per channel and point");
      }
      break;
    }
    case InitialCondition::Kind::modes: {
      if (grid.dim == 0) throw InvalidArgument("mode initial conditions need a spatial grid");
      // Random Fourier modes up to max_mode per axis, coefficient vector
      // normalized to `amplitude`. Coefficients are drawn independently of
      // the grid so the same seed gives the same function at any resolution.
      std::normal_distribution<double> normal;
      struct Mode {
        int mx, my;
        double a, b;
      };
      std::vector<Mode> modes;
      const int m = ic.max_mode;
      if (grid.dim == 1) {
        for (int k = 1; k <= m; ++k) modes.push_back({k, 0, 0.0, 0.0});
      } else {
        for (int kx = 0; kx <= m; ++kx)
          for (int ky = -m; ky <= m; ++ky)
            if (kx > 0 || ky > 0) modes.push_back({kx, ky, 0.0, 0.0});
      }
      for (Eigen::Index c = 0; c < channels; ++c) {
        double norm = 0.0;
        for (auto& md : modes) {
          md.a = normal(rng);
          md.b = normal(rng);
          norm += md.a * md.a + md.b * md.b;
        }
        const double scale = ic.amplitude / std::sqrt(norm);
        const double tau = 2.0 * std::numbers::pi;
        if (grid.dim == 1) {
          const auto x = grid.coordinates(0);
          for (Eigen::Index p = 0; p < points; ++p) {
            double v = 0.0;
            for (const auto& md : modes) {
              const double ph = tau * md.mx * x[p] / grid.length[0];
              v += md.a * std::cos(ph) + md.b * std::sin(ph);
            }
            s(c, p) = scale * v;
          }
        } else {
          const auto x = grid.coordinates(0);
          const auto y = grid.coordinates(1);
          for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < y.size(); ++j) {
              double v = 0.0;
              for (const auto& md : modes) {
                const double ph = tau * (md.mx * x[i] / grid.length[0] + md.my * y[j] / grid.length[1]);
                v += md.a * std::cos(ph) + md.b * std::sin(ph);
              }
              s(c, static_cast<Eigen::Index>(i * y.size() + j)) = scale * v;
            }
        }
      }
      break;
    }
  }
  return s;
}

namespace {

Field subsample(const Field& s, const Grid& fine, int factor) {
  if (fine.dim == 1) {
    Field out(s.rows(), fine.n[0] / factor);
    for (Eigen::Index i = 0; i < out.cols(); ++i) out.col(i) = s.col(i * factor);
    return out;
  }
  const int nx = fine.n[0] / factor, ny = fine.n[1] / factor;
  Field out(s.rows(), static_cast<Eigen::Index>(nx) * ny);
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy)
      out.col(static_cast<Eigen::Index>(ix) * ny + iy) =
          s.col(static_cast<Eigen::Index>(ix * factor) * fine.n[1] + iy * factor);
  return out;
}

}  // namespace

Dataset generate_dataset(const SystemSpec& spec, const GenConfig& gen, std::uint64_t seed, int threads) {
  gen.validate(spec);
  Dataset ds;
  ds.system = spec;
  ds.grid = gen.grid;
  ds.times = gen.output_times();
  ds.seed = seed;
  ds.rtol = gen.rtol;
  ds.atol = gen.atol;
  ds.pde_dt = spec.spatial_dim() > 0 ? (gen.pde_dt > 0.0 ? gen.pde_dt : default_pde_dt(spec.id)) : 0.0;
  ds.noise = gen.noise;
  ds.refine = gen.refine;

  Grid sim_grid = gen.grid;
  for (auto& k : sim_grid.n) k *= gen.refine;
  const auto n = static_cast<std::size_t>(gen.n_trajectories);
  std::vector<std::optional<Trajectory>> slots(n);
  parallel_for(n, threads, [&](std::size_t i) {
    auto hyper = make_rng(substream(seed, {1, i}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    grf::GrfConfig g;
    g.mean = gen.grf.mean;
    g.length_scale = gen.grf.length_scale.lo + (gen.grf.length_scale.hi - gen.grf.length_scale.lo) * unit(hyper);
    g.output_scale = gen.grf.output_scale.lo + (gen.grf.output_scale.hi - gen.grf.output_scale.lo) * unit(hyper);
    g.n_samples = gen.grf.n_samples;
    g.t0 = gen.t0;
    g.t1 = gen.t1;
    const auto knots = grf::knot_times(g);
    const auto values = grf::sample_grf(g, substream(seed, {2, i}));
    const auto pf = grf::fit_spline(knots, values);
    const Field s0 = sample_initial(spec, sim_grid, gen.initial, substream(seed, {3, i}));
    try {
      auto tr = generate_trajectory(spec, sim_grid, s0, pf, ds.times, gen.rtol, gen.atol, ds.pde_dt);
      if (gen.refine > 1)
        for (auto& s : tr.states) s = subsample(s, sim_grid, gen.refine);
      tr.seed = substream(seed, {1, i});
      slots[i] = std::move(tr);
    } catch (const BlowUpError&) {
      // recorded below
    } catch (const StepLimitError&) {
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      ds.trajectories.push_back(std::move(*slots[i]));
    } else {
      ds.dropped.push_back(i);
    }
  }
  if (ds.dropped.size() * 10 > n)
    throw Error(fmt::format("{} of {} trajectories blew up (limit 10%)", ds.dropped.size(), n));
  if (gen.noise > 0.0) add_noise(ds, gen.noise, substream(seed, {4}));
  return ds;
}

void add_noise(Dataset& ds, double sigma, std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& tr : ds.trajectories)
    for (const auto& s : tr.states) {
      total += s.cwiseAbs().sum();
      count += static_cast<std::size_t>(s.size());
    }
  if (count == 0) return;
  const double stddev = sigma * total / static_cast<double>(count);
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& tr : ds.trajectories)
    for (auto& s : tr.states)
      for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] += normal(rng);
  ds.noise = sigma;
}

std::vector<FoldPoint> locate_fold(FoldForm form, double theta1, double theta2) {
  if (theta2 == 0.0) throw InvalidArgument("the cubic coefficient theta2 must be non-zero");
  std::vector<FoldPoint> out;
  if (form == FoldForm::varying_constant) {
    // f = u + theta1 s + theta2 s^3, f' = theta1 + 3 theta2 s^2.
    const double s2 = -theta1 / (3.0 * theta2);
    if (s2 < 0.0) return out;
    if (s2 == 0.0) {
      out.push_back({0.0, 0.0});
      return out;
    }
    const double r = std::sqrt(s2);
    for (double s : {r, -r}) out.push_back({-theta1 * s - theta2 * s * s * s, s});
  } else {
    // f = theta1 + u s + theta2 s^3, f' = u + 3 theta2 s^2  =>  s^3 = theta1 / (2 theta2).
    const double s = std::cbrt(theta1 / (2.0 * theta2));
    out.push_back({-3.0 * theta2 * s * s, s});
  }
  std::sort(out.begin(), out.end(), [](const FoldPoint& a, const FoldPoint& b) { return a.u < b.u; });
  return out;
}

}  // namespace snode::systems
