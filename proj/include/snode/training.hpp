#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snode/model.hpp"
#include "snode/spectral.hpp"
#include "snode/systems.hpp"

namespace snode::training {

struct StageSettings {
  int epochs = 0;
  double lr = 1e-3;
  int switch_epoch = 0;  // rollout stages: epochs before this use euler, rk4 afterwards

  friend bool operator==(const StageSettings&, const StageSettings&) = default;
};

struct TrainConfig {
  double alpha = 0.01;  // L1 coefficient (stages 1 and 2)
  double alpha_finetune = -1.0;  // L1 coefficient of stage 2; -1 reuses alpha
  double l1_warmup = 0.2;  // stage 1 ramps the L1 coefficient up over this fraction of its epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  StageSettings stage1{1000, 1e-2, 0};
  StageSettings stage2{200, 1e-3, 120};
  StageSettings stage3{200, 1e-3, 0};
  int batch_size = 16;  // trajectories per Adam step
  spectral::TimeDerivativeMethod time_derivative = spectral::TimeDerivativeMethod::central_fd;
  double horizon_threshold = 1e-4;  // times the training-data variance
  int max_horizon = 20;
  int substeps = 1;      // fixed solver steps per stored time interval
  int val_horizon = 20;  // window length of the validation rollouts
  double val_fraction = 0.1;
  std::vector<double> lr_milestones{0.5, 0.75};  // fractions of the stage's epochs
  double lr_decay = 0.5;
  int max_failures = 5;
  bool keep_best = true;
  double extract_threshold = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;

  double finetune_alpha() const { return alpha_finetune >= 0.0 ? alpha_finetune : alpha; }
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// Bias-corrected Adam update of params in place.
void adam_step(OptState& opt, std::span<double> params, std::span<const double> grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seed-stable hold-out: round(fraction * n) trajectories (at least one when n >= 2).
Split split_trajectories(std::size_t n, double fraction, std::uint64_t seed);

struct EpochRecord {
  int stage = 0;
  int epoch = 0;  // 1-based within the stage
  double train_loss = 0.0;
  double val_loss = 0.0;
  int horizon = 0;  // 0 for flow matching
  double lr = 0.0;
  std::string solver;  // "none" for flow matching
};

struct StageSummary {
  int stage = 0;
  int epochs_run = 0;
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
  int best_epoch = 0;  // 0 = the starting parameters were kept
  int failures = 0;
  bool aborted = false;
  std::string message;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<StageSummary> stages;
  std::vector<std::string> equations;  // one per state channel, when SymNet is used

  std::vector<double> train_losses(int stage) const;
  std::vector<double> val_losses(int stage) const;
  const StageSummary* summary(int stage) const;
  void append(const TrainReport& other);
};

/// Per-epoch CSV: stage,epoch,train_loss,val_loss,horizon,lr,solver.
std::string report_csv(const TrainReport& r);
/// Structured summary (JSON), including wall-clock seconds.
std::string report_json(const TrainReport& r);

/// Flow matching of SymNet against estimated time derivatives (no ODE solves).
TrainReport stage1_flow_match(const systems::Dataset& ds, ModelBundle& model, const TrainConfig& cfg);

/// Rollout fine-tuning of SymNet (GeNN excluded).
TrainReport stage2_finetune(const systems::Dataset& ds, ModelBundle& model, const TrainConfig& cfg);

/// Rollout training of GeNN with SymNet frozen (or disabled).
TrainReport stage3_residual(const systems::Dataset& ds, ModelBundle& model, const TrainConfig& cfg);

enum class Pipeline { stage1, stages12, stages123, e1, e2 };
Pipeline parse_pipeline(const std::string& text);
std::string to_string(Pipeline p);

/// Runs the selected stages and sets the model's network flags accordingly.
TrainReport train_model(const systems::Dataset& ds, ModelBundle& model, const TrainConfig& cfg, Pipeline p);

struct EvalMetrics {
  double mse = 0.0;  // over trajectories, times, points and channels; inf when any rollout blew up
  double normalized_mse = 0.0;  // mse / variance of the dataset states
  std::vector<double> per_trajectory;
  std::vector<bool> blown_up;
  std::size_t blowups = 0;
};

/// Full-horizon rollouts from each trajectory's initial state, compared at the stored times.
EvalMetrics evaluate_field(const ode::VectorField& f, const systems::Dataset& ds, const ode::SolveConfig& cfg,
                           int threads = 1);
EvalMetrics evaluate_mse(const ModelBundle& model, const systems::Dataset& ds, const ode::SolveConfig& cfg,
                         int threads = 1);

/// Mean squared error of single-interval predictions started from every stored state.
double one_step_mse(const ModelBundle& model, const systems::Dataset& ds, const ode::SolveConfig& cfg,
                    int threads = 1);

/// Max over coordinates of |fd - analytic| / (max(|fd|, |analytic|) + 1e-12), central differences.
double grad_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> params,
                  std::span<const double> analytic, double eps = 1e-6);

struct SweepPoint {
  double u = 0.0;
  std::vector<double> state;  // final state, channel means over the grid
  double radius = 0.0;        // mean over the last quarter of samples of the RMS state norm
  bool blew_up = false;
};

/// Long-time rollouts under constant parameter values u (all parameter channels set to u).
std::vector<SweepPoint> bifurcation_sweep(const ModelBundle& model, std::span<const double> u_values,
                                          const Field& s0, double t_end, int samples, const ode::SolveConfig& cfg,
                                          int threads = 1);

/// Extracted SymNet equation text per state channel.
std::vector<std::string> equation_text(const ModelBundle& model, double threshold);

}  // namespace snode::training
