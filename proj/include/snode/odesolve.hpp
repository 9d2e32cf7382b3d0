#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "snode/types.hpp"

namespace snode::ode {

enum class Method { euler, rk4, dopri5 };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct SolveConfig {
  Method method = Method::rk4;
  double dt = 1e-2;          // fixed step (euler, rk4)
  double rtol = 1e-6;        // dopri5
  double atol = 1e-6;        // dopri5
  double initial_dt = 0.0;   // dopri5; 0 selects automatically
  std::size_t max_steps = 10'000'000;
  double blowup_threshold = 1e300;  // max |s| before a BlowUpError

  void validate() const;
  friend bool operator==(const SolveConfig&, const SolveConfig&) = default;
};

/// Forcing u(x, t) on the grid at time t (param channels x grid points).
using ForcingFn = std::function<Field(double)>;

/// ds/dt = F(s, u, t), written into `out` (already shaped like s).
using VectorField = std::function<void(double t, const Field& s, const Field& u, Field& out)>;

struct Solution {
  std::vector<double> times;
  std::vector<Field> states;
  std::size_t steps = 0;
  std::size_t rejected = 0;
};

/// Integrates from (t0, s0) and returns the state at every output time
/// (ascending, each > t0 or == t0). Fixed-step methods shrink the final step
/// of each interval onto the output time; dopri5 uses dense output.
Solution ode_solve(const VectorField& rhs, const Field& s0, double t0, std::span<const double> output_times,
                   const ForcingFn& u, const SolveConfig& cfg);

Field ode_solve(const VectorField& rhs, const Field& s0, double t0, double t1, const ForcingFn& u,
                const SolveConfig& cfg);

/// A vector field with trainable parameters and an exact vector-Jacobian product.
class ParametricField {
 public:
  virtual ~ParametricField() = default;

  virtual std::size_t parameter_count() const = 0;

  virtual void evaluate(double t, const Field& s, const Field& u, Field& out) const = 0;

  /// grad_params += (dF/dtheta)^T upstream ; grad_state = (dF/ds)^T upstream.
  virtual void vjp(double t, const Field& s, const Field& u, const Field& upstream,
                   std::span<double> grad_params, Field& grad_state) const = 0;

  VectorField as_vector_field() const;
};

/// Everything needed to replay a fixed-step rollout and run it backwards.
struct RolloutTape {
  struct Step {
    double t = 0.0;
    double h = 0.0;
    std::vector<Field> stage_states;  // input state of each stage (1 for euler, 4 for rk4)
    std::vector<Field> stage_forcing;
    std::vector<double> stage_times;
  };

  Method method = Method::euler;
  Field initial;
  std::vector<Step> steps;
  std::vector<std::size_t> output_step;  // index one past the step that lands on each output
};

struct Rollout {
  std::vector<Field> states;  // at the output times
  RolloutTape tape;
};

struct RolloutGradient {
  std::vector<double> params;
  Field initial_state;
};

Rollout taped_rollout(const ParametricField& f, const Field& s0, double t0, std::span<const double> output_times,
                      const ForcingFn& u, const SolveConfig& cfg);

/// Re-executes the recorded steps (same step sizes and forcing values).
std::vector<Field> replay(const ParametricField& f, const RolloutTape& tape);

/// Reverse sweep over a tape. output_grads[j] is dLoss/d(state at output j).
RolloutGradient backprop_rollout(const ParametricField& f, const RolloutTape& tape,
                                 std::span<const Field> output_grads);

/// Discretize-then-optimize gradient of a fixed-step rollout (euler or rk4 only).
RolloutGradient rollout_vjp(const ParametricField& f, const Field& s0, double t0,
                            std::span<const double> output_times, const ForcingFn& u, const SolveConfig& cfg,
                            std::span<const Field> output_grads);

}  // namespace snode::ode
