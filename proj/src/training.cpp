#include "snode/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include <fmt/core.h>
#include <json.hpp>

#include "snode/error.hpp"
#include "snode/parallel.hpp"
#include "snode/rng.hpp"

namespace snode::training {

using systems::Dataset;
using systems::Trajectory;

void TrainConfig::validate() const {
  auto stage_ok = [](const StageSettings& s, const char* name) {
    if (s.epochs < 0) throw InvalidArgument(fmt::format("{} epochs must be non-negative", name));
    if (!(s.lr > 0.0)) throw InvalidArgument(fmt::format("{} learning rate must be positive", name));
    if (s.switch_epoch < 0) throw InvalidArgument(fmt::format("{} solver switch epoch must be non-negative", name));
  };
  stage_ok(stage1, "stage 1");
  stage_ok(stage2, "stage 2");
  stage_ok(stage3, "stage 3");
  if (!(alpha >= 0.0)) throw InvalidArgument("alpha must be non-negative");
  if (!(alpha_finetune >= 0.0) && alpha_finetune != -1.0)
    throw InvalidArgument("alpha_finetune must be non-negative (or -1 to reuse alpha)");
  if (!(l1_warmup >= 0.0 && l1_warmup <= 1.0)) throw InvalidArgument("L1 warm-up fraction must be in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (!(horizon_threshold > 0.0)) throw InvalidArgument("horizon threshold must be positive");
  if (max_horizon < 1 || val_horizon < 1) throw InvalidArgument("horizons must be at least 1");
  if (substeps < 1) throw InvalidArgument("substeps must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidArgument("validation fraction must be in [0, 1)");
  for (double m : lr_milestones)
    if (!(m > 0.0 && m <= 1.0)) throw InvalidArgument("learning-rate milestones must be in (0, 1]");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("learning-rate decay must be in (0, 1]");
  if (max_failures < 1) throw InvalidArgument("max failures must be at least 1");
  if (!(extract_threshold >= 0.0)) throw InvalidArgument("extraction threshold must be non-negative");
  if (threads < 1) throw InvalidArgument("threads must be at least 1");
}

void adam_step(OptState& opt, std::span<double> params, std::span<const double> grads, double lr, double beta1,
               double beta2, double eps) {
  if (grads.size() != params.size()) throw InvalidArgument("gradient and parameter sizes differ");
  if (opt.m.size() != params.size()) {
    opt.m.assign(params.size(), 0.0);
    opt.v.assign(params.size(), 0.0);
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * grads[i];
    opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mh = opt.m[i] / c1;
    const double vh = opt.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

Split split_trajectories(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(substream(seed, {20}));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && nval == 0 && n >= 2) nval = 1;
  nval = std::min(nval, n > 0 ? n - 1 : 0);
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::vector<double> TrainReport::train_losses(int stage) const {
  std::vector<double> out;
  for (const auto& e : epochs)
    if (e.stage == stage) out.push_back(e.train_loss);
  return out;
}

std::vector<double> TrainReport::val_losses(int stage) const {
  std::vector<double> out;
  for (const auto& e : epochs)
    if (e.stage == stage) out.push_back(e.val_loss);
  return out;
}

const StageSummary* TrainReport::summary(int stage) const {
  for (const auto& s : stages)
    if (s.stage == stage) return &s;
  return nullptr;
}

void TrainReport::append(const TrainReport& other) {
  epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
  stages.insert(stages.end(), other.stages.begin(), other.stages.end());
  if (!other.equations.empty()) equations = other.equations;
}

std::string report_csv(const TrainReport& r) {
  std::string out = "stage,epoch,train_loss,val_loss,horizon,lr,solver\n";
  for (const auto& e : r.epochs)
    out += fmt::format("{},{},{},{},{},{},{}\n", e.stage, e.epoch, e.train_loss, e.val_loss, e.horizon, e.lr, e.solver);
  return out;
}

namespace {

nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return fmt::format("{}", v);
}

}  // namespace

std::string report_json(const TrainReport& r) {
  nlohmann::json j;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : r.stages) {
    j["stages"].push_back({{"stage", s.stage},
                           {"epochs_run", s.epochs_run},
                           {"initial_val_loss", finite_or_string(s.initial_val_loss)},
                           {"final_val_loss", finite_or_string(s.final_val_loss)},
                           {"best_epoch", s.best_epoch},
                           {"failures", s.failures},
                           {"aborted", s.aborted},
                           {"message", s.message},
                           {"seconds", s.seconds}});
  }
  j["equations"] = r.equations;
  j["epochs_recorded"] = r.epochs.size();
  return j.dump(2) + "\n";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double lr_at(const StageSettings& s, const TrainConfig& cfg, int epoch0) {
  double lr = s.lr;
  for (double m : cfg.lr_milestones)
    if (static_cast<double>(epoch0) >= m * s.epochs) lr *= cfg.lr_decay;
  return lr;
}

double uniform_step(const std::vector<double>& times) {
  if (times.size() < 2) throw InvalidArgument("trajectories need at least two stored times");
  const double dt = times[1] - times[0];
  for (std::size_t i = 2; i < times.size(); ++i)
    if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
      throw InvalidArgument("stored times must be uniformly spaced");
  return dt;
}

void check_dataset(const Dataset& ds, const ModelBundle& model) {
  if (ds.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  if (ds.grid.dim != model.dictionary.dim) throw InvalidArgument("dataset grid dimension does not match the model");
  if (ds.system.state_channels() != model.dictionary.state_channels)
    throw InvalidArgument("dataset state channels do not match the model");
}

// Thread-per-index evaluation into slots, then a fixed-order reduction.
template <class Fn>
std::vector<double> reduce_grads(const std::vector<std::size_t>& idx, std::size_t nparams, int threads, double& sse,
                                 Fn&& fn) {
  std::vector<std::vector<double>> grads(idx.size(), std::vector<double>(nparams, 0.0));
  std::vector<double> losses(idx.size(), 0.0);
  parallel_for(idx.size(), threads, [&](std::size_t k) { losses[k] = fn(idx[k], grads[k]); });
  std::vector<double> total(nparams, 0.0);
  sse = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    sse += losses[k];
    for (std::size_t i = 0; i < nparams; ++i) total[i] += grads[k][i];
  }
  return total;
}

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

// ---- stage 1 ---------------------------------------------------------------

struct FlowData {
  RowMatrix dict;    // symbols x (times * points)
  RowMatrix target;  // channels x (times * points)
};

FlowData prepare_flow(const Dataset& ds, const Trajectory& tr, const symnet::DictionaryBuilder& builder,
                      spectral::TimeDerivativeMethod method) {
  const double dt = uniform_step(tr.times);
  const auto T = static_cast<Eigen::Index>(tr.times.size());
  if (T < 4) throw InvalidArgument("flow matching needs at least 4 stored times");
  const auto P = static_cast<Eigen::Index>(ds.grid.size());
  const auto C = tr.states.front().rows();
  const auto forcing = systems::make_forcing(ds.system, ds.grid, tr.param);
  FlowData d;
  d.dict.resize(static_cast<Eigen::Index>(builder.spec().size()), T * P);
  d.target.resize(C, T * P);
  RowMatrix one;
  for (Eigen::Index t = 0; t < T; ++t) {
    builder.build(tr.states[static_cast<std::size_t>(t)], forcing(tr.times[static_cast<std::size_t>(t)]), one);
    d.dict.middleCols(t * P, P) = one;
  }
  std::vector<double> series(static_cast<std::size_t>(T));
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index p = 0; p < P; ++p) {
      for (Eigen::Index t = 0; t < T; ++t) series[static_cast<std::size_t>(t)] = tr.states[static_cast<std::size_t>(t)](c, p);
      const auto der = spectral::temporal_derivative(series, dt, method);
      for (Eigen::Index t = 0; t < T; ++t) d.target(c, t * P + p) = der[static_cast<std::size_t>(t)];
    }
  return d;
}

double flow_sse(const symnet::SymNetParams& p, const FlowData& d, std::vector<double>* grad, double scale) {
  const RowMatrix diff = symnet::symnet_forward(p, d.dict) - d.target;
  const double sse = diff.squaredNorm();
  if (grad) {
    const RowMatrix up = (2.0 * scale) * diff;
    symnet::symnet_vjp(p, d.dict, up, *grad, nullptr);
  }
  return sse;
}

// ---- rollout stages -------------------------------------------------------

struct Window {
  std::size_t traj = 0;
  std::size_t start = 0;
  int length = 0;
};

ode::SolveConfig rollout_config(ode::Method method, double interval, int substeps) {
  ode::SolveConfig sc;
  sc.method = method;
  sc.dt = interval / substeps;
  sc.blowup_threshold = systems::kBlowUpThreshold;
  sc.max_steps = 1'000'000;
  return sc;
}

double window_sse(const ModelField& f, const Trajectory& tr, const ode::ForcingFn& u, const Window& w,
                  const ode::SolveConfig& sc, double scale, std::vector<double>* grad) {
  const std::span<const double> outs(tr.times.data() + w.start + 1, static_cast<std::size_t>(w.length));
  const Field& s0 = tr.states[w.start];
  double sse = 0.0;
  if (!grad) {
    const auto sol = ode::ode_solve(f.as_vector_field(), s0, tr.times[w.start], outs, u, sc);
    for (int j = 0; j < w.length; ++j)
      sse += (sol.states[static_cast<std::size_t>(j)] - tr.states[w.start + 1 + static_cast<std::size_t>(j)]).squaredNorm();
    return sse;
  }
  const auto r = ode::taped_rollout(f, s0, tr.times[w.start], outs, u, sc);
  std::vector<Field> out_grads;
  out_grads.reserve(static_cast<std::size_t>(w.length));
  for (int j = 0; j < w.length; ++j) {
    const Field diff = r.states[static_cast<std::size_t>(j)] - tr.states[w.start + 1 + static_cast<std::size_t>(j)];
    sse += diff.squaredNorm();
    out_grads.push_back((2.0 * scale) * diff);
  }
  if (!std::isfinite(sse)) throw NonFiniteLoss("rollout loss is not finite");
  const auto g = ode::backprop_rollout(f, r.tape, out_grads);
  for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += g.params[i];
  return sse;
}

double data_variance(const Dataset& ds, const std::vector<std::size_t>& idx) {
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (auto i : idx)
    for (const auto& s : ds.trajectories[i].states) {
      sum += s.sum();
      sq += s.squaredNorm();
      count += static_cast<std::size_t>(s.size());
    }
  if (count == 0) return 0.0;
  const double mean = sum / static_cast<double>(count);
  return std::max(0.0, sq / static_cast<double>(count) - mean * mean);
}

TrainReport rollout_stage(int stage, const Dataset& ds, ModelBundle& model, const TrainConfig& cfg,
                          const StageSettings& st, Trainable which, bool use_l1) {
  const auto t_start = Clock::now();
  cfg.validate();
  check_dataset(ds, model);
  const double interval = uniform_step(ds.times);
  const auto T = ds.times.size();
  const Split split = split_trajectories(ds.trajectories.size(), cfg.val_fraction, cfg.seed);

  std::vector<ode::ForcingFn> forcing;
  for (const auto& tr : ds.trajectories) forcing.push_back(systems::make_forcing(ds.system, ds.grid, tr.param));
  const ModelField field(model, ds.grid, which);
  std::span<double> params = which == Trainable::symnet ? model.symnet.values() : model.genn.values();
  const std::size_t np = params.size();
  const std::size_t points = ds.grid.size() * static_cast<std::size_t>(model.dictionary.state_channels);

  std::vector<Window> val_windows;
  const int hv = std::min<int>(cfg.val_horizon, static_cast<int>(T) - 1);
  for (auto i : split.val)
    for (std::size_t s = 0; s + 1 < T; s += static_cast<std::size_t>(hv))
      val_windows.push_back({i, s, static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(hv), T - 1 - s))});
  const ode::SolveConfig val_sc = rollout_config(ode::Method::rk4, interval, cfg.substeps);

  auto val_loss = [&]() -> double {
    if (val_windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> sse(val_windows.size(), 0.0);
    std::size_t count = 0;
    for (const auto& w : val_windows) count += static_cast<std::size_t>(w.length) * points;
    try {
      parallel_for(val_windows.size(), cfg.threads, [&](std::size_t k) {
        const auto& w = val_windows[k];
        sse[k] = window_sse(field, ds.trajectories[w.traj], forcing[w.traj], w, val_sc, 0.0, nullptr);
      });
    } catch (const BlowUpError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const OverflowError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const StepLimitError&) {
      return std::numeric_limits<double>::infinity();
    }
    double total = 0.0;
    for (double v : sse) total += v;
    return std::isfinite(total) ? total / static_cast<double>(count) : std::numeric_limits<double>::infinity();
  };

  TrainReport report;
  StageSummary sum;
  sum.stage = stage;
  sum.initial_val_loss = val_loss();
  double best_val = sum.initial_val_loss;
  std::vector<double> best(params.begin(), params.end());

  const double threshold = cfg.horizon_threshold * data_variance(ds, split.train);
  const int max_h = std::min<int>(cfg.max_horizon, static_cast<int>(T) - 1);
  int horizon = 1;
  double recovery = 1.0;
  int consecutive = 0;
  OptState opt;
  auto rng = make_rng(substream(cfg.seed, {static_cast<std::uint64_t>(30 + stage)}));

  int epoch = 0;
  while (epoch < st.epochs) {
    const double lr = lr_at(st, cfg, epoch) * recovery;
    const auto method = epoch >= st.switch_epoch ? ode::Method::rk4 : ode::Method::euler;
    const ode::SolveConfig sc = rollout_config(method, interval, cfg.substeps);
    const std::vector<double> snapshot(params.begin(), params.end());
    const OptState opt_snapshot = opt;
    const auto rng_snapshot = rng;

    std::vector<std::size_t> order = split.train;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> pick(0, T - 1 - static_cast<std::size_t>(horizon));
    std::vector<std::size_t> starts(ds.trajectories.size(), 0);
    for (auto i : order) starts[i] = pick(rng);

    double epoch_sse = 0.0;
    std::size_t epoch_count = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size))));
        const std::size_t count = batch.size() * static_cast<std::size_t>(horizon) * points;
        const double scale = 1.0 / static_cast<double>(count);
        double sse = 0.0;
        auto grad = reduce_grads(batch, np, cfg.threads, sse, [&](std::size_t i, std::vector<double>& g) {
          const Window w{i, starts[i], horizon};
          return window_sse(field, ds.trajectories[i], forcing[i], w, sc, scale, &g);
        });
        if (!std::isfinite(sse)) throw NonFiniteLoss("rollout loss is not finite");
        if (use_l1 && which == Trainable::symnet) symnet::add_l1_subgradient(model.symnet, cfg.finetune_alpha(), grad);
        adam_step(opt, params, grad, lr, cfg.beta1, cfg.beta2, cfg.eps);
        epoch_sse += sse;
        epoch_count += count;
      }
    } catch (const Error& e) {
      const bool recoverable = dynamic_cast<const BlowUpError*>(&e) || dynamic_cast<const OverflowError*>(&e) ||
                               dynamic_cast<const StepLimitError*>(&e) || dynamic_cast<const NonFiniteLoss*>(&e);
      if (!recoverable) throw;
      std::copy(snapshot.begin(), snapshot.end(), params.begin());
      opt = opt_snapshot;
      rng = rng_snapshot;
      ++sum.failures;
      if (++consecutive >= cfg.max_failures) {
        if (cfg.keep_best) std::copy(best.begin(), best.end(), params.begin());
        throw Error(fmt::format("stage {} aborted after {} consecutive rollout failures (last: {})", stage,
                                consecutive, e.what()));
      }
      horizon = std::max(1, horizon / 2);
      recovery *= 0.5;
      rng.discard(1 + static_cast<unsigned long long>(sum.failures));
      continue;
    }
    consecutive = 0;
    const double train_loss = epoch_count ? epoch_sse / static_cast<double>(epoch_count) : 0.0;
    const double vl = val_loss();
    ++epoch;
    report.epochs.push_back({stage, epoch, train_loss, vl, horizon, lr, ode::to_string(method)});
    if (vl < best_val || std::isnan(best_val)) {
      best_val = vl;
      best.assign(params.begin(), params.end());
      sum.best_epoch = epoch;
    }
    if (train_loss < threshold) horizon = std::min(horizon + 1, max_h);
  }
  sum.epochs_run = epoch;
  if (cfg.keep_best && !val_windows.empty()) std::copy(best.begin(), best.end(), params.begin());
  else sum.best_epoch = epoch;
  sum.final_val_loss = val_loss();
  sum.seconds = seconds_since(t_start);
  report.stages.push_back(sum);
  return report;
}

}  // namespace

TrainReport stage1_flow_match(const Dataset& ds, ModelBundle& model, const TrainConfig& cfg) {
  const auto t_start = Clock::now();
  cfg.validate();
  check_dataset(ds, model);
  if (!model.use_symnet) throw InvalidArgument("flow matching trains SymNet, which is disabled");
  const symnet::DictionaryBuilder builder(model.dictionary, ds.grid);
  const auto n = ds.trajectories.size();
  std::vector<FlowData> data(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    data[i] = prepare_flow(ds, ds.trajectories[i], builder, cfg.time_derivative);
  });
  const Split split = split_trajectories(n, cfg.val_fraction, cfg.seed);
  auto& p = model.symnet;
  const std::size_t np = p.size();

  auto mse = [&](const std::vector<std::size_t>& idx) -> double {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> sse(idx.size());
    parallel_for(idx.size(), cfg.threads, [&](std::size_t k) { sse[k] = flow_sse(p, data[idx[k]], nullptr, 0.0); });
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      total += sse[k];
      count += static_cast<std::size_t>(data[idx[k]].target.size());
    }
    return total / static_cast<double>(count);
  };

  TrainReport report;
  StageSummary sum;
  sum.stage = 1;
  sum.initial_val_loss = mse(split.val);
  OptState opt;
  auto rng = make_rng(substream(cfg.seed, {21}));
  const auto& st = cfg.stage1;
  int epoch = 0;
  for (; epoch < st.epochs; ++epoch) {
    const double lr = lr_at(st, cfg, epoch);
    const double ramp = cfg.l1_warmup * st.epochs;
    const double alpha = ramp > 0.0 ? cfg.alpha * std::min(1.0, epoch / ramp) : cfg.alpha;
    const std::vector<double> snapshot(p.values().begin(), p.values().end());
    std::vector<std::size_t> order = split.train;
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    try {
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size))));
        std::size_t count = 0;
        for (auto i : batch) count += static_cast<std::size_t>(data[i].target.size());
        const double scale = 1.0 / static_cast<double>(count);
        double sse = 0.0;
        auto grad = reduce_grads(batch, np, cfg.threads, sse,
                                 [&](std::size_t i, std::vector<double>& g) { return flow_sse(p, data[i], &g, scale); });
        if (!std::isfinite(sse)) throw NonFiniteLoss("flow-matching loss is not finite");
        symnet::add_l1_subgradient(p, alpha, grad);
        adam_step(opt, p.values(), grad, lr, cfg.beta1, cfg.beta2, cfg.eps);
      }
      train_loss = mse(split.train);
      if (!std::isfinite(train_loss)) throw NonFiniteLoss("flow-matching loss is not finite");
    } catch (const Error& e) {
      if (!dynamic_cast<const NonFiniteLoss*>(&e) && !dynamic_cast<const OverflowError*>(&e)) throw;
      std::copy(snapshot.begin(), snapshot.end(), p.values().begin());
      sum.aborted = true;
      sum.message = fmt::format("stopped at epoch {}: {}; parameters restored to the previous epoch", epoch + 1, e.what());
      break;
    }
    report.epochs.push_back({1, epoch + 1, train_loss, mse(split.val), 0, lr, "none"});
  }
  sum.epochs_run = epoch;
  sum.best_epoch = epoch;
  sum.final_val_loss = mse(split.val);
  sum.seconds = seconds_since(t_start);
  report.stages.push_back(sum);
  return report;
}

TrainReport stage2_finetune(const Dataset& ds, ModelBundle& model, const TrainConfig& cfg) {
  if (!model.use_symnet) throw InvalidArgument("stage 2 fine-tunes SymNet, which is disabled");
  const bool genn = model.use_genn;
  model.use_genn = false;
  try {
    auto r = rollout_stage(2, ds, model, cfg, cfg.stage2, Trainable::symnet, true);
    model.use_genn = genn;
    return r;
  } catch (...) {
    model.use_genn = genn;
    throw;
  }
}

TrainReport stage3_residual(const Dataset& ds, ModelBundle& model, const TrainConfig& cfg) {
  if (model.genn.empty()) throw InvalidArgument("model has no GeNN");
  model.use_genn = true;
  return rollout_stage(3, ds, model, cfg, cfg.stage3, Trainable::genn, false);
}

Pipeline parse_pipeline(const std::string& text) {
  if (text == "1") return Pipeline::stage1;
  if (text == "1-2") return Pipeline::stages12;
  if (text == "1-2-3") return Pipeline::stages123;
  if (text == "e1" || text == "E1") return Pipeline::e1;
  if (text == "e2" || text == "E2") return Pipeline::e2;
  throw InvalidArgument(fmt::format("unknown stage list '{}' (expected 1, 1-2, 1-2-3, e1 or e2)", text));
}

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::stage1: return "1";
    case Pipeline::stages12: return "1-2";
    case Pipeline::stages123: return "1-2-3";
    case Pipeline::e1: return "e1";
    case Pipeline::e2: return "e2";
  }
  return "?";
}

std::vector<std::string> equation_text(const ModelBundle& model, double threshold) {
  std::vector<std::string> out;
  if (!model.use_symnet) return out;
  for (const auto& e : symnet::extract_equation(model.symnet, model.dictionary, threshold)) out.push_back(e.text);
  return out;
}

TrainReport train_model(const Dataset& ds, ModelBundle& model, const TrainConfig& cfg, Pipeline p) {
  TrainReport report;
  switch (p) {
    case Pipeline::stage1:
      model.use_symnet = true;
      model.use_genn = false;
      report.append(stage1_flow_match(ds, model, cfg));
      break;
    case Pipeline::stages12:
    case Pipeline::e2:
      model.use_symnet = true;
      model.use_genn = false;
      report.append(stage1_flow_match(ds, model, cfg));
      report.append(stage2_finetune(ds, model, cfg));
      break;
    case Pipeline::stages123:
      model.use_symnet = true;
      model.use_genn = false;
      report.append(stage1_flow_match(ds, model, cfg));
      report.append(stage2_finetune(ds, model, cfg));
      report.append(stage3_residual(ds, model, cfg));
      break;
    case Pipeline::e1:
      model.use_symnet = false;
      report.append(stage3_residual(ds, model, cfg));
      break;
  }
  report.equations = equation_text(model, cfg.extract_threshold);
  return report;
}

namespace {

double dataset_variance(const Dataset& ds) {
  std::vector<std::size_t> all(ds.trajectories.size());
  std::iota(all.begin(), all.end(), 0);
  return data_variance(ds, all);
}

ode::SolveConfig eval_config(const ode::SolveConfig& cfg) {
  ode::SolveConfig sc = cfg;
  sc.blowup_threshold = std::min(sc.blowup_threshold, systems::kBlowUpThreshold);
  sc.validate();
  return sc;
}

}  // namespace

EvalMetrics evaluate_field(const ode::VectorField& f, const Dataset& ds, const ode::SolveConfig& cfg, int threads) {
  if (ds.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  const auto sc = eval_config(cfg);
  const auto n = ds.trajectories.size();
  EvalMetrics m;
  m.per_trajectory.assign(n, 0.0);
  m.blown_up.assign(n, false);
  std::vector<std::size_t> counts(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& tr = ds.trajectories[i];
    std::size_t count = 0;
    for (const auto& s : tr.states) count += static_cast<std::size_t>(s.size());
    counts[i] = count;
    try {
      const auto forcing = systems::make_forcing(ds.system, ds.grid, tr.param);
      const auto sol = ode::ode_solve(f, tr.states.front(), tr.times.front(), tr.times, forcing, sc);
      double sse = 0.0;
      for (std::size_t j = 0; j < tr.states.size(); ++j) sse += (sol.states[j] - tr.states[j]).squaredNorm();
      m.per_trajectory[i] = sse / static_cast<double>(count);
      if (!std::isfinite(m.per_trajectory[i])) throw BlowUpError("non-finite prediction", tr.times.back());
    } catch (const BlowUpError&) {
      m.per_trajectory[i] = std::numeric_limits<double>::infinity();
      m.blown_up[i] = true;
    } catch (const OverflowError&) {
      m.per_trajectory[i] = std::numeric_limits<double>::infinity();
      m.blown_up[i] = true;
    } catch (const StepLimitError&) {
      m.per_trajectory[i] = std::numeric_limits<double>::infinity();
      m.blown_up[i] = true;
    }
  });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m.blown_up[i]) ++m.blowups;
    total += m.per_trajectory[i] * static_cast<double>(counts[i]);
    count += counts[i];
  }
  m.mse = m.blowups ? std::numeric_limits<double>::infinity() : total / static_cast<double>(count);
  const double var = dataset_variance(ds);
  m.normalized_mse = var > 0.0 ? m.mse / var : std::numeric_limits<double>::infinity();
  return m;
}

EvalMetrics evaluate_mse(const ModelBundle& model, const Dataset& ds, const ode::SolveConfig& cfg, int threads) {
  const ModelField field(model, ds.grid);
  return evaluate_field(field.as_vector_field(), ds, cfg, threads);
}

double one_step_mse(const ModelBundle& model, const Dataset& ds, const ode::SolveConfig& cfg, int threads) {
  if (ds.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  const auto sc = eval_config(cfg);
  const ModelField field(model, ds.grid);
  const auto vf = field.as_vector_field();
  const auto n = ds.trajectories.size();
  std::vector<double> sse(n, 0.0);
  std::vector<std::size_t> counts(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& tr = ds.trajectories[i];
    const auto forcing = systems::make_forcing(ds.system, ds.grid, tr.param);
    for (std::size_t j = 0; j + 1 < tr.times.size(); ++j) {
      try {
        const Field s = ode::ode_solve(vf, tr.states[j], tr.times[j], tr.times[j + 1], forcing, sc);
        sse[i] += (s - tr.states[j + 1]).squaredNorm();
      } catch (const BlowUpError&) {
        sse[i] = std::numeric_limits<double>::infinity();
      } catch (const OverflowError&) {
        sse[i] = std::numeric_limits<double>::infinity();
      }
      counts[i] += static_cast<std::size_t>(tr.states[j + 1].size());
    }
  });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += sse[i];
    count += counts[i];
  }
  return total / static_cast<double>(count);
}

double grad_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> params,
                  std::span<const double> analytic, double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) throw InvalidArgument("finite-difference step must be in [1e-8, 1e-4]");
  if (analytic.size() != params.size()) throw InvalidArgument("analytic gradient size does not match the parameters");
  std::vector<double> p(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + eps;
    const double up = loss(p);
    p[i] = orig - eps;
    const double down = loss(p);
    p[i] = orig;
    const double fd = (up - down) / (2.0 * eps);
    const double err = std::abs(fd - analytic[i]) / (std::max(std::abs(fd), std::abs(analytic[i])) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

std::vector<SweepPoint> bifurcation_sweep(const ModelBundle& model, std::span<const double> u_values,
                                          const Field& s0, double t_end, int samples, const ode::SolveConfig& cfg,
                                          int threads) {
  if (!(t_end > 0.0)) throw InvalidArgument("sweep end time must be positive");
  if (samples < 4) throw InvalidArgument("sweep needs at least 4 samples");
  if (s0.rows() != model.system.state_channels() || s0.cols() != static_cast<Eigen::Index>(model.grid.size()))
    throw InvalidArgument("initial state does not match the model's channels and grid");
  const auto sc = eval_config(cfg);
  const ModelField field(model, model.grid);
  const auto vf = field.as_vector_field();
  std::vector<double> times(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) times[static_cast<std::size_t>(k)] = t_end * (k + 1) / samples;
  std::vector<SweepPoint> out(u_values.size());
  parallel_for(u_values.size(), threads, [&](std::size_t i) {
    SweepPoint& pt = out[i];
    pt.u = u_values[i];
    const auto pf = grf::ParamFunction::constant(pt.u, 0.0, t_end);
    const auto forcing = systems::make_forcing(model.system, model.grid, pf);
    try {
      const auto sol = ode::ode_solve(vf, s0, 0.0, times, forcing, sc);
      const std::size_t first = sol.states.size() * 3 / 4;
      double acc = 0.0;
      for (std::size_t k = first; k < sol.states.size(); ++k) {
        const auto& s = sol.states[k];
        acc += std::sqrt(s.squaredNorm() / static_cast<double>(s.cols()));
      }
      pt.radius = acc / static_cast<double>(sol.states.size() - first);
      const auto& last = sol.states.back();
      for (Eigen::Index c = 0; c < last.rows(); ++c) pt.state.push_back(last.row(c).mean());
    } catch (const BlowUpError&) {
      pt.blew_up = true;
    } catch (const OverflowError&) {
      pt.blew_up = true;
    } catch (const StepLimitError&) {
      pt.blew_up = true;
    }
  });
  return out;
}

}  // namespace snode::training
