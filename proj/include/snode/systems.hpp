#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "snode/grf.hpp"
#include "snode/odesolve.hpp"
#include "snode/spectral.hpp"
#include "snode/types.hpp"

namespace snode::systems {

using spectral::Grid;

enum class SystemId { ode_nonlinear, saddle_node, pitchfork, hopf, dr, ks, ns };

std::string to_string(SystemId id);
SystemId parse_system(const std::string& name);

/// How the scalar GRF draw u1(t) becomes the forcing field u(x, t).
enum class ForcingTemplate {
  none,     // u(x, t) = u1(t)
  dr_ramp,  // u = pi x / 5 + u1(t)
  ks_ramp,  // u = x / 16 + u1(t)
  ns_wave,  // u = u1(t) (0.1 sin(2 pi (x + y)) + cos(2 pi (x + y)))
};

std::string to_string(ForcingTemplate f);
ForcingTemplate parse_forcing(const std::string& name);

struct SystemSpec {
  SystemId id = SystemId::ode_nonlinear;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double diffusion = 0.01;   // DR D
  double reaction = 0.01;    // DR K
  double viscosity = 0.001;  // NS nu
  ForcingTemplate forcing = ForcingTemplate::none;

  static SystemSpec defaults(SystemId id);

  int spatial_dim() const;
  int state_channels() const;
  int param_channels() const { return 1; }
  /// Highest spatial derivative order in the true right-hand side.
  int derivative_order() const;
};

/// u(x, t) on the grid from the parameter-function values at t.
Field forcing_field(const SystemSpec& spec, const Grid& grid, std::span<const double> u_values);

ode::ForcingFn make_forcing(const SystemSpec& spec, const Grid& grid, const grf::ParamFunction& pf);

/// Exact tendency of the system.
Field true_rhs(const SystemSpec& spec, const Field& s, const Field& u, double t, const Grid& grid);

ode::VectorField true_vector_field(const SystemSpec& spec, const Grid& grid);

struct Trajectory {
  std::vector<double> times;
  std::vector<Field> states;
  std::vector<double> knot_times;
  std::vector<double> knot_values;
  grf::ParamFunction param;
  std::uint64_t seed = 0;
};

/// Uniform [lo, hi] range of a sampled hyperparameter.
struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct GrfSampling {
  double mean = 0.0;
  Range length_scale{0.2, 2.0};
  Range output_scale{0.0, 10.0};
  int n_samples = 64;
};

struct InitialCondition {
  enum class Kind { uniform, modes, fixed };
  Kind kind = Kind::uniform;
  Range range{0.0, 1.0};     // uniform: per channel, per point
  int max_mode = 4;          // modes: random Fourier modes 1..max_mode per axis
  double amplitude = 1.0;
  std::vector<double> values;  // fixed: one value per channel (ODE) or the full field
};

std::string to_string(InitialCondition::Kind k);
InitialCondition::Kind parse_initial_kind(const std::string& name);

struct GenConfig {
  int n_trajectories = 10;
  double t0 = 0.0;
  double t1 = 1.0;
  int n_times = 51;
  Grid grid = Grid::point();
  GrfSampling grf;
  InitialCondition initial;
  double rtol = 1e-9;
  double atol = 1e-9;
  double pde_dt = 0.0;  // 0 selects the per-system default
  double noise = 0.0;   // relative Gaussian noise added to stored states
  int refine = 1;       // PDEs: simulate on a grid this many times finer per axis, store every refine-th point

  std::vector<double> output_times() const;
  void validate(const SystemSpec& spec) const;
};

struct Dataset {
  SystemSpec system;
  Grid grid;
  std::vector<double> times;
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;
  double rtol = 0.0;
  double atol = 0.0;
  double pde_dt = 0.0;
  double noise = 0.0;
  int refine = 1;
  std::vector<std::size_t> dropped;  // trajectory indices aborted by blow-up
  std::string config_echo;           // resolved configuration (JSON text)
};

/// Default internal step of the pseudospectral integrator.
double default_pde_dt(SystemId id);

/// Integrates one trajectory: dopri5 for ODE systems, integrating-factor RK4
/// with 2/3 dealiasing for PDEs.
Trajectory generate_trajectory(const SystemSpec& spec, const Grid& grid, const Field& s0,
                               const grf::ParamFunction& pf, std::span<const double> times, double rtol,
                               double atol, double pde_dt);

/// Draws an initial condition from the config's sampler.
Field sample_initial(const SystemSpec& spec, const Grid& grid, const InitialCondition& ic, std::uint64_t seed);

Dataset generate_dataset(const SystemSpec& spec, const GenConfig& gen, std::uint64_t seed, int threads = 1);

/// Adds zero-mean Gaussian noise with std sigma * mean|s| over the dataset.
void add_noise(Dataset& ds, double sigma, std::uint64_t seed);

/// Threshold on max |s| above which a trajectory counts as blown up.
inline constexpr double kBlowUpThreshold = 1e6;

// Folds of f(s) = a + b s + theta2 s^3.
enum class FoldForm {
  varying_constant,  // saddle-node form: f = u + theta1 s + theta2 s^3
  varying_linear,    // pitchfork form:   f = theta1 + u s + theta2 s^3
};

struct FoldPoint {
  double u = 0.0;
  double s = 0.0;
};

/// Parameter values u* where f = 0 and df/ds = 0 hold together.
std::vector<FoldPoint> locate_fold(FoldForm form, double theta1, double theta2);

}  // namespace snode::systems
