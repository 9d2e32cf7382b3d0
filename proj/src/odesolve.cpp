#include "snode/odesolve.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "snode/error.hpp"

namespace snode::ode {

std::string to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw InvalidArgument("unknown solver method '" + name + "'");
}

void SolveConfig::validate() const {
  if (method != Method::dopri5 && !(dt > 0.0)) throw InvalidArgument("fixed step dt must be positive");
  if (method == Method::dopri5 && (!(rtol > 0.0) || !(atol > 0.0)))
    throw InvalidArgument("dopri5 tolerances must be positive");
  if (initial_dt < 0.0) throw InvalidArgument("initial dt must be non-negative");
  if (max_steps < 1) throw InvalidArgument("max steps must be at least 1");
}

VectorField ParametricField::as_vector_field() const {
  return [this](double t, const Field& s, const Field& u, Field& out) { evaluate(t, s, u, out); };
}

namespace {

void check_times(double t0, std::span<const double> times) {
  double prev = t0;
  for (double t : times) {
    if (!(t >= prev)) throw InvalidArgument("output times must be ascending and not before t0");
    prev = t;
  }
}

void check_state(const Field& s, double t, double threshold) {
  if (!s.allFinite()) throw BlowUpError(fmt::format("state became non-finite at t = {}", t), t);
  if (s.size() > 0 && s.cwiseAbs().maxCoeff() > threshold)
    throw BlowUpError(fmt::format("state magnitude exceeded {:g} at t = {}", threshold, t), t);
}

// Whether a fixed step of size dt from t should be shrunk onto `target`.
bool lands_on(double t, double dt, double target) {
  return t + dt >= target - 1e-12 * std::max(1.0, std::abs(target));
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = -71.0 / 57600, e3 = 71.0 / 16695, e4 = -71.0 / 1920, e5 = 17253.0 / 339200,
                 e6 = -22.0 / 525, e7 = 1.0 / 40;

// Continuous extension (4th order): y(t + th h) = y + h sum_i K_i (P_i . [th, th^2, th^3, th^4]).
constexpr double P[7][4] = {
    {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799},
    {0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
    {0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632},
    {0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
    {0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423},
};

double error_norm(const Field& err, const Field& y0, const Field& y1, double rtol, double atol) {
  const auto scale = (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array());
  return std::sqrt((err.array() / scale).square().mean());
}

Solution solve_fixed(const VectorField& rhs, const Field& s0, double t0, std::span<const double> times,
                     const ForcingFn& u, const SolveConfig& cfg) {
  Solution sol;
  Field s = s0;
  double t = t0;
  Field k1(s.rows(), s.cols()), k2 = k1, k3 = k1, k4 = k1;
  for (double target : times) {
    while (t < target) {
      if (sol.steps >= cfg.max_steps) throw StepLimitError(fmt::format("step limit reached at t = {}", t));
      const bool last = lands_on(t, cfg.dt, target);
      const double h = last ? target - t : cfg.dt;
      if (cfg.method == Method::euler) {
        rhs(t, s, u(t), k1);
        s += h * k1;
      } else {
        const Field u_mid = u(t + 0.5 * h);
        rhs(t, s, u(t), k1);
        rhs(t + 0.5 * h, s + 0.5 * h * k1, u_mid, k2);
        rhs(t + 0.5 * h, s + 0.5 * h * k2, u_mid, k3);
        rhs(t + h, s + h * k3, u(t + h), k4);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      t = last ? target : t + h;
      ++sol.steps;
      check_state(s, t, cfg.blowup_threshold);
    }
    sol.times.push_back(target);
    sol.states.push_back(s);
  }
  return sol;
}

Solution solve_dopri5(const VectorField& rhs, const Field& s0, double t0, std::span<const double> times,
                      const ForcingFn& u, const SolveConfig& cfg) {
  Solution sol;
  std::size_t next = 0;
  while (next < times.size() && times[next] == t0) {
    sol.times.push_back(t0);
    sol.states.push_back(s0);
    ++next;
  }
  if (next == times.size()) return sol;
  const double t_end = times.back();

  Field y = s0;
  double t = t0;
  std::vector<Field> k(7, Field(s0.rows(), s0.cols()));
  rhs(t, y, u(t), k[0]);

  double h = cfg.initial_dt;
  if (h <= 0.0) {
    const auto scale = (cfg.atol + cfg.rtol * y.cwiseAbs().array());
    const double d0 = std::sqrt((y.array() / scale).square().mean());
    const double d1 = std::sqrt((k[0].array() / scale).square().mean());
    const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    Field f1(y.rows(), y.cols());
    rhs(t + h0, y + h0 * k[0], u(t + h0), f1);
    const double d2 = std::sqrt(((f1 - k[0]).array() / scale).square().mean()) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }

  constexpr double safety = 0.9, fac_min = 0.2, fac_max = 5.0;
  constexpr double beta1 = 0.7 / 5.0, beta2 = 0.4 / 5.0;
  double err_prev = 1e-4;
  bool rejected_last = false;
  Field ynew(y.rows(), y.cols());
  Field err(y.rows(), y.cols());

  while (next < times.size()) {
    if (sol.steps + sol.rejected >= cfg.max_steps)
      throw StepLimitError(fmt::format("dopri5 step limit reached at t = {}", t));
    const bool final_step = t + h >= t_end - 1e-12 * std::max(1.0, std::abs(t_end));
    if (final_step) h = t_end - t;
    if (!(h > 0.0) || t + h == t) throw StepLimitError(fmt::format("dopri5 step size underflow at t = {}", t));

    rhs(t + c2 * h, y + h * (a21 * k[0]), u(t + c2 * h), k[1]);
    rhs(t + c3 * h, y + h * (a31 * k[0] + a32 * k[1]), u(t + c3 * h), k[2]);
    rhs(t + c4 * h, y + h * (a41 * k[0] + a42 * k[1] + a43 * k[2]), u(t + c4 * h), k[3]);
    rhs(t + c5 * h, y + h * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3]), u(t + c5 * h), k[4]);
    rhs(t + h, y + h * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] + a65 * k[4]), u(t + h), k[5]);
    ynew = y + h * (b1 * k[0] + b3 * k[2] + b4 * k[3] + b5 * k[4] + b6 * k[5]);
    const double t_new = final_step ? t_end : t + h;
    rhs(t_new, ynew, u(t_new), k[6]);
    err = h * (e1 * k[0] + e3 * k[2] + e4 * k[3] + e5 * k[4] + e6 * k[5] + e7 * k[6]);
    double en = error_norm(err, y, ynew, cfg.rtol, cfg.atol);
    if (!std::isfinite(en)) en = 1e10;

    if (en <= 1.0) {
      while (next < times.size() && times[next] <= t_new) {
        const double target = times[next];
        if (target == t_new) {
          sol.states.push_back(ynew);
        } else {
          const double th = (target - t) / h;
          const double p[4] = {th, th * th, th * th * th, th * th * th * th};
          Field yi = y;
          for (int i = 0; i < 7; ++i) {
            const double w = P[i][0] * p[0] + P[i][1] * p[1] + P[i][2] * p[2] + P[i][3] * p[3];
            if (w != 0.0) yi += (h * w) * k[i];
          }
          sol.states.push_back(std::move(yi));
        }
        sol.times.push_back(target);
        ++next;
      }
      t = t_new;
      y = ynew;
      k[0] = k[6];
      ++sol.steps;
      check_state(y, t, cfg.blowup_threshold);
      double fac = en == 0.0 ? fac_max : safety * std::pow(en, -beta1) * std::pow(err_prev, beta2);
      fac = std::clamp(fac, fac_min, fac_max);
      if (rejected_last) fac = std::min(fac, 1.0);
      h *= fac;
      err_prev = std::max(en, 1e-4);
      rejected_last = false;
    } else {
      if (!ynew.allFinite() && h < 1e-14 * std::max(1.0, std::abs(t)))
        throw BlowUpError(fmt::format("state became non-finite at t = {}", t), t);
      h *= std::max(fac_min, safety * std::pow(en, -beta1));
      ++sol.rejected;
      rejected_last = true;
    }
  }
  return sol;
}

}  // namespace

Solution ode_solve(const VectorField& rhs, const Field& s0, double t0, std::span<const double> output_times,
                   const ForcingFn& u, const SolveConfig& cfg) {
  cfg.validate();
  check_times(t0, output_times);
  if (!s0.allFinite()) throw InvalidArgument("initial state must be finite");
  if (cfg.method == Method::dopri5) return solve_dopri5(rhs, s0, t0, output_times, u, cfg);
  return solve_fixed(rhs, s0, t0, output_times, u, cfg);
}

Field ode_solve(const VectorField& rhs, const Field& s0, double t0, double t1, const ForcingFn& u,
                const SolveConfig& cfg) {
  if (!(t1 > t0)) throw InvalidArgument("t1 must be greater than t0");
  const double times[1] = {t1};
  return ode_solve(rhs, s0, t0, times, u, cfg).states.back();
}

Rollout taped_rollout(const ParametricField& f, const Field& s0, double t0, std::span<const double> output_times,
                      const ForcingFn& u, const SolveConfig& cfg) {
  cfg.validate();
  if (cfg.method == Method::dopri5) throw InvalidArgument("taped rollouts require a fixed-step method");
  check_times(t0, output_times);
  if (!s0.allFinite()) throw InvalidArgument("initial state must be finite");

  Rollout r;
  r.tape.method = cfg.method;
  r.tape.initial = s0;
  Field s = s0;
  double t = t0;
  Field k1(s.rows(), s.cols()), k2 = k1, k3 = k1, k4 = k1;
  for (double target : output_times) {
    while (t < target) {
      if (r.tape.steps.size() >= cfg.max_steps) throw StepLimitError(fmt::format("step limit reached at t = {}", t));
      const bool last = lands_on(t, cfg.dt, target);
      RolloutTape::Step step;
      step.t = t;
      step.h = last ? target - t : cfg.dt;
      const double h = step.h;
      if (cfg.method == Method::euler) {
        step.stage_times = {t};
        step.stage_forcing = {u(t)};
        step.stage_states = {s};
        f.evaluate(t, s, step.stage_forcing[0], k1);
        s += h * k1;
      } else {
        const double tm = t + 0.5 * h;
        step.stage_times = {t, tm, tm, t + h};
        const Field u_mid = u(tm);
        step.stage_forcing = {u(t), u_mid, u_mid, u(t + h)};
        step.stage_states.reserve(4);
        step.stage_states.push_back(s);
        f.evaluate(t, s, step.stage_forcing[0], k1);
        step.stage_states.push_back(s + 0.5 * h * k1);
        f.evaluate(tm, step.stage_states[1], step.stage_forcing[1], k2);
        step.stage_states.push_back(s + 0.5 * h * k2);
        f.evaluate(tm, step.stage_states[2], step.stage_forcing[2], k3);
        step.stage_states.push_back(s + h * k3);
        f.evaluate(t + h, step.stage_states[3], step.stage_forcing[3], k4);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      t = last ? target : t + h;
      r.tape.steps.push_back(std::move(step));
      check_state(s, t, cfg.blowup_threshold);
    }
    r.tape.output_step.push_back(r.tape.steps.size());
    r.states.push_back(s);
  }
  return r;
}

std::vector<Field> replay(const ParametricField& f, const RolloutTape& tape) {
  std::vector<Field> out;
  Field s = tape.initial;
  Field k1(s.rows(), s.cols()), k2 = k1, k3 = k1, k4 = k1;
  std::size_t next = 0;
  while (next < tape.output_step.size() && tape.output_step[next] == 0) {
    out.push_back(s);
    ++next;
  }
  for (std::size_t i = 0; i < tape.steps.size(); ++i) {
    const auto& st = tape.steps[i];
    const double h = st.h;
    if (tape.method == Method::euler) {
      f.evaluate(st.stage_times[0], s, st.stage_forcing[0], k1);
      s += h * k1;
    } else {
      f.evaluate(st.stage_times[0], s, st.stage_forcing[0], k1);
      f.evaluate(st.stage_times[1], s + 0.5 * h * k1, st.stage_forcing[1], k2);
      f.evaluate(st.stage_times[2], s + 0.5 * h * k2, st.stage_forcing[2], k3);
      f.evaluate(st.stage_times[3], s + h * k3, st.stage_forcing[3], k4);
      s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    while (next < tape.output_step.size() && tape.output_step[next] == i + 1) {
      out.push_back(s);
      ++next;
    }
  }
  return out;
}

RolloutGradient backprop_rollout(const ParametricField& f, const RolloutTape& tape,
                                 std::span<const Field> output_grads) {
  if (output_grads.size() != tape.output_step.size())
    throw InvalidArgument("one gradient per output time is required");
  RolloutGradient g;
  g.params.assign(f.parameter_count(), 0.0);
  const Eigen::Index rows = tape.initial.rows(), cols = tape.initial.cols();
  Field adj = Field::Zero(rows, cols);
  Field gs(rows, cols);

  // Outputs sorted by step index; inject their gradients while sweeping back.
  std::ptrdiff_t out_idx = static_cast<std::ptrdiff_t>(tape.output_step.size()) - 1;
  auto inject = [&](std::size_t step_boundary) {
    while (out_idx >= 0 && tape.output_step[out_idx] == step_boundary) {
      adj += output_grads[out_idx];
      --out_idx;
    }
  };

  for (std::size_t i = tape.steps.size(); i-- > 0;) {
    inject(i + 1);
    const auto& st = tape.steps[i];
    const double h = st.h;
    if (tape.method == Method::euler) {
      // s' = s + h F(s)
      const Field gk = h * adj;
      f.vjp(st.stage_times[0], st.stage_states[0], st.stage_forcing[0], gk, g.params, gs);
      adj += gs;
    } else {
      Field gk1 = (h / 6.0) * adj;
      Field gk2 = (h / 3.0) * adj;
      Field gk3 = (h / 3.0) * adj;
      const Field gk4 = (h / 6.0) * adj;
      f.vjp(st.stage_times[3], st.stage_states[3], st.stage_forcing[3], gk4, g.params, gs);
      adj += gs;
      gk3 += h * gs;
      f.vjp(st.stage_times[2], st.stage_states[2], st.stage_forcing[2], gk3, g.params, gs);
      adj += gs;
      gk2 += (0.5 * h) * gs;
      f.vjp(st.stage_times[1], st.stage_states[1], st.stage_forcing[1], gk2, g.params, gs);
      adj += gs;
      gk1 += (0.5 * h) * gs;
      f.vjp(st.stage_times[0], st.stage_states[0], st.stage_forcing[0], gk1, g.params, gs);
      adj += gs;
    }
  }
  inject(0);
  g.initial_state = std::move(adj);
  return g;
}

RolloutGradient rollout_vjp(const ParametricField& f, const Field& s0, double t0,
                            std::span<const double> output_times, const ForcingFn& u, const SolveConfig& cfg,
                            std::span<const Field> output_grads) {
  const auto r = taped_rollout(f, s0, t0, output_times, u, cfg);
  return backprop_rollout(f, r.tape, output_grads);
}

}  // namespace snode::ode
