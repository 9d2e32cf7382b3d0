#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gen.hpp"
#include "snode/config.hpp"
#include "snode/error.hpp"
#include "snode/training.hpp"

using namespace snode;
using namespace snode::training;
using snode::testing::Gen;
using systems::Dataset;
using systems::SystemId;
using systems::SystemSpec;

namespace {

Dataset ode_dataset(int n, std::uint64_t seed) {
  auto c = config::preset(SystemId::ode_nonlinear);
  c.data.n_trajectories = n;
  return systems::generate_dataset(c.system, c.data, seed);
}

ModelBundle fresh_model(const Dataset& ds, std::uint64_t seed = 1, int K = 3) {
  ModelOptions opts;
  opts.hidden_layers = K;
  opts.genn_hidden = {16, 16};
  return ModelBundle::create(ds.system, ds.grid, opts, seed);
}

// exact -s^2 + u on [u, s] for a K = 3 network: z = [p3, p2, p1, u, s]
void set_exact(ModelBundle& m) {
  for (auto& v : m.symnet.values()) v = 0.0;
  m.symnet.weight(1) << 0, 1, 0, 1;
  m.symnet.output_weight() << 0, 0, -1, 1, 0;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.stage1 = {300, 1e-2, 0};
  cfg.stage2 = {5, 1e-4, 0};
  cfg.stage3 = {5, 1e-3, 0};
  cfg.alpha_finetune = 0.0;
  return cfg;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  OptState opt;
  std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
  adam_step(opt, p, g, 0.1);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(opt.step, 1);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  OptState opt;
  std::vector<double> p{0.0, 0.0, 0.0}, g{3.0, -0.02, 1e-3};
  adam_step(opt, p, g, 0.01);
  for (std::size_t i = 0; i < 3; ++i) {
    const double want = -0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p[i], want, 1e-9);
  }
}

TEST(Adam, Deterministic) {
  Gen gen(701);
  OptState a, b;
  auto p = gen.vec(10), q = p;
  for (int step = 0; step < 5; ++step) {
    auto g = gen.vec(10);
    adam_step(a, p, g, 1e-3);
    adam_step(b, q, g, 1e-3);
  }
  EXPECT_EQ(p, q);
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.v, b.v);
}

TEST(Split, SizesAndStability) {
  for (std::size_t n : {2u, 10u, 37u, 200u}) {
    auto s = split_trajectories(n, 0.1, 4);
    EXPECT_EQ(s.val.size(), std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * n))));
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> want(n);
    std::iota(want.begin(), want.end(), 0);
    EXPECT_EQ(all, want);
    auto again = split_trajectories(n, 0.1, 4);
    EXPECT_EQ(again.val, s.val);
  }
}

TEST(GradCheck, QuadraticOnLinearModel) {
  // loss = sum (a x_i + b - y_i)^2
  std::vector<double> x{0.1, 0.5, -1.3, 2.0}, y{1.0, -0.3, 0.7, 0.2};
  auto loss = [&](std::span<const double> p) {
    double l = 0;
    for (std::size_t i = 0; i < x.size(); ++i) l += std::pow(p[0] * x[i] + p[1] - y[i], 2);
    return l;
  };
  std::vector<double> p{0.4, -0.8}, g{0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = p[0] * x[i] + p[1] - y[i];
    g[0] += 2 * r * x[i];
    g[1] += 2 * r;
  }
  EXPECT_LT(grad_check(loss, p, g, 1e-6), 1e-9);
  g[0] *= 1.01;
  EXPECT_GT(grad_check(loss, p, g, 1e-6), 1e-3);
  EXPECT_THROW(grad_check(loss, p, g, 1e-2), InvalidArgument);
}

TEST(Stage1, RecoversRiccatiCoefficients) {
  auto c = config::preset(SystemId::ode_nonlinear);
  auto ds = ode_dataset(200, 3);
  auto model = ModelBundle::create(ds.system, ds.grid, c.model, 1);
  auto r = stage1_flow_match(ds, model, c.train);
  auto e = symnet::extract_equation(model.symnet, model.dictionary, 1e-3);
  EXPECT_NEAR(e[0].coefficient("s·s"), -1.0, 0.02);
  EXPECT_NEAR(e[0].coefficient("u"), 1.0, 0.02);
  EXPECT_EQ(r.train_losses(1).size(), static_cast<std::size_t>(c.train.stage1.epochs));
}

TEST(Stage1, ReachesNearZeroLoss) {
  auto c = config::preset(SystemId::ode_nonlinear);
  auto ds = ode_dataset(200, 3);
  auto model = ModelBundle::create(ds.system, ds.grid, c.model, 1);
  auto r = stage1_flow_match(ds, model, c.train);
  EXPECT_LT(r.train_losses(1).back(), 1e-6);
}

TEST(Stage1, PenaltyFreeRunFitsAtLeastAsWell) {
  auto ds = ode_dataset(60, 5);
  auto cfg = quick_config();
  auto m0 = fresh_model(ds), m1 = fresh_model(ds);
  cfg.alpha = 0.0;
  auto r0 = stage1_flow_match(ds, m0, cfg);
  cfg.alpha = 0.01;
  auto r1 = stage1_flow_match(ds, m1, cfg);
  EXPECT_LE(r0.train_losses(1).back(), r1.train_losses(1).back());
}

TEST(Stage1, LossMostlyNonIncreasing) {
  auto c = config::preset(SystemId::ode_nonlinear);
  auto ds = ode_dataset(200, 3);
  auto model = ModelBundle::create(ds.system, ds.grid, c.model, 1);
  auto losses = stage1_flow_match(ds, model, c.train).train_losses(1);
  ASSERT_EQ(c.train.stage1.lr, 1e-2);
  int ok = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) ok += losses[i] <= losses[i - 1];
  EXPECT_GE(ok, 0.95 * (losses.size() - 1));
}

TEST(Stage2, StableAtExactWeights) {
  auto ds = ode_dataset(40, 7);
  auto model = fresh_model(ds);
  set_exact(model);
  const auto before = std::vector<double>(model.symnet.values().begin(), model.symnet.values().end());
  auto cfg = quick_config();
  cfg.stage2 = {5, 1e-3, 0};
  auto r = stage2_finetune(ds, model, cfg);
  EXPECT_LT(r.stages[0].initial_val_loss, 1e-8);
  double moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) moved = std::max(moved, std::abs(model.symnet.values()[i] - before[i]));
  EXPECT_LT(moved, 1e-4);
}

TEST(Stage2, DrRefinedEquationPattern) {
  auto c = config::preset(SystemId::dr);
  auto ds = systems::generate_dataset(c.system, c.data, c.seed);
  auto model = ModelBundle::create(c.system, ds.grid, c.model, c.seed);
  stage1_flow_match(ds, model, c.train);
  stage2_finetune(ds, model, c.train);
  auto e = symnet::extract_equation(model.symnet, model.dictionary, c.train.extract_threshold)[0];
  EXPECT_GE(e.coefficient("s_xx"), 0.008);
  EXPECT_LE(e.coefficient("s_xx"), 0.012);
  EXPECT_NEAR(e.coefficient("u"), 1.0, 0.03);
  for (const auto& t : e.terms)
    if (t.label != "s_xx" && t.label != "u") EXPECT_LT(std::abs(t.coefficient), 0.02) << t.label;
}

TEST(Stage2, HorizonScheduleContract) {
  auto ds = ode_dataset(20, 8);
  auto model = fresh_model(ds);
  set_exact(model);
  auto cfg = quick_config();
  cfg.stage2 = {6, 1e-4, 3};
  cfg.horizon_threshold = 1e-300;  // never reached
  auto r = stage2_finetune(ds, model, cfg);
  for (const auto& e : r.epochs) EXPECT_EQ(e.horizon, 1);
  EXPECT_EQ(r.epochs[0].solver, "euler");
  EXPECT_EQ(r.epochs[5].solver, "rk4");

  cfg.horizon_threshold = 1e300;  // always reached
  auto grow = stage2_finetune(ds, model, cfg);
  for (std::size_t i = 0; i < grow.epochs.size(); ++i) EXPECT_EQ(grow.epochs[i].horizon, static_cast<int>(i) + 1);
}

TEST(Stage3, ZeroResidualStartsWhereStage2Ended) {
  auto ds = ode_dataset(30, 9);
  auto model = fresh_model(ds);
  auto cfg = quick_config();
  cfg.stage1.epochs = 200;
  stage1_flow_match(ds, model, cfg);
  auto r2 = stage2_finetune(ds, model, cfg);
  const auto symnet_before = model.symnet;
  model.use_genn = true;
  auto r3 = stage3_residual(ds, model, cfg);
  EXPECT_EQ(r3.stages[0].initial_val_loss, r2.stages[0].final_val_loss);
  EXPECT_TRUE(model.symnet == symnet_before);
}

TEST(Stage3, LearnsSmallResidual) {
  // trajectories of -s^2 + u + 0.01 sin(s), forcing reused from a generated set
  auto ds = ode_dataset(60, 10);
  auto truth = [](double, const Field& s, const Field& u, Field& out) {
    out = (-s.array().square() + u.array() + 0.01 * s.array().sin()).matrix();
  };
  ode::SolveConfig sc;
  sc.method = ode::Method::dopri5;
  sc.rtol = sc.atol = 1e-10;
  std::vector<double> later(ds.times.begin() + 1, ds.times.end());
  for (auto& tr : ds.trajectories) {
    auto forcing = systems::make_forcing(ds.system, ds.grid, tr.param);
    auto sol = ode::ode_solve(truth, tr.states[0], ds.times[0], later, forcing, sc);
    for (std::size_t k = 0; k < later.size(); ++k) tr.states[k + 1] = sol.states[k];
  }
  auto model = fresh_model(ds);
  set_exact(model);
  auto cfg = quick_config();
  cfg.stage2 = {5, 1e-4, 0};
  cfg.stage3 = {40, 3e-3, 0};
  cfg.substeps = 2;
  auto r2 = stage2_finetune(ds, model, cfg);
  model.use_genn = true;
  auto r3 = stage3_residual(ds, model, cfg);
  EXPECT_LT(r3.stages[0].final_val_loss, r2.stages[0].final_val_loss);
}

TEST(Pipelines, AblationsDisableOneNetwork) {
  auto ds = ode_dataset(20, 11);
  auto cfg = quick_config();
  cfg.stage1.epochs = 50;
  auto m2 = fresh_model(ds);
  auto r = train_model(ds, m2, cfg, Pipeline::e2);
  EXPECT_TRUE(m2.use_symnet);
  EXPECT_FALSE(m2.use_genn);
  EXPECT_EQ(r.stages.size(), 2u);
  EXPECT_EQ(r.equations.size(), 1u);

  auto m1 = fresh_model(ds);
  auto r1 = train_model(ds, m1, cfg, Pipeline::e1);
  EXPECT_FALSE(m1.use_symnet);
  EXPECT_TRUE(m1.use_genn);
  ASSERT_EQ(r1.stages.size(), 1u);
  EXPECT_EQ(r1.stages[0].stage, 3);
  EXPECT_TRUE(r1.equations.empty());

  // disabled SymNet contributes nothing to the field
  ModelField f(m1, m1.grid);
  m1.genn = genn::GeNNParams(m1.genn.layer_sizes());
  Field out(1, 1);
  f.evaluate(0.0, Field::Constant(1, 1, 0.7), Field::Constant(1, 1, 0.3), out);
  EXPECT_EQ(out(0, 0), 0.0);

  for (auto p : {Pipeline::stage1, Pipeline::stages12, Pipeline::stages123, Pipeline::e1, Pipeline::e2})
    EXPECT_EQ(parse_pipeline(to_string(p)), p);
  EXPECT_THROW(parse_pipeline("2-3"), InvalidArgument);
}

TEST(Determinism, SameSeedSameReport) {
  auto ds = ode_dataset(24, 12);
  auto cfg = quick_config();
  cfg.stage1.epochs = 40;
  auto a = fresh_model(ds), b = fresh_model(ds), c = fresh_model(ds);
  auto ra = train_model(ds, a, cfg, Pipeline::stages123);
  auto rb = train_model(ds, b, cfg, Pipeline::stages123);
  EXPECT_EQ(report_csv(ra), report_csv(rb));
  EXPECT_TRUE(a.symnet == b.symnet);
  EXPECT_TRUE(a.genn == b.genn);
  cfg.threads = 3;
  auto rc = train_model(ds, c, cfg, Pipeline::stages123);
  ASSERT_EQ(rc.epochs.size(), ra.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i)
    EXPECT_NEAR(rc.epochs[i].train_loss, ra.epochs[i].train_loss, 1e-12 * (1 + ra.epochs[i].train_loss));
}

TEST(Reports, CsvAndJson) {
  TrainReport r;
  r.epochs.push_back({1, 1, 0.5, 0.25, 0, 0.01, "none"});
  r.epochs.push_back({2, 1, 0.125, 0.0625, 1, 0.001, "euler"});
  StageSummary s;
  s.stage = 2;
  s.final_val_loss = std::numeric_limits<double>::infinity();
  r.stages.push_back(s);
  EXPECT_EQ(report_csv(r),
            "stage,epoch,train_loss,val_loss,horizon,lr,solver\n1,1,0.5,0.25,0,0.01,none\n2,1,0.125,0.0625,1,0.001,euler\n");
  auto j = nlohmann::json::parse(report_json(r));
  EXPECT_TRUE(j.is_object());
  EXPECT_EQ(r.val_losses(2), (std::vector<double>{0.0625}));
}

TEST(Evaluate, TrueFieldReproducesItsData) {
  auto ds = ode_dataset(10, 13);
  ode::SolveConfig sc;
  sc.method = ode::Method::dopri5;
  auto m = evaluate_field(systems::true_vector_field(ds.system, ds.grid), ds, sc);
  EXPECT_LT(m.mse, 1e-8);
  EXPECT_EQ(m.blowups, 0u);
  EXPECT_EQ(m.per_trajectory.size(), 10u);

  auto model = fresh_model(ds);
  set_exact(model);
  model.use_genn = false;
  EXPECT_LT(evaluate_mse(model, ds, sc).mse, 1e-8);
  EXPECT_LT(one_step_mse(model, ds, sc), 1e-10);
}

TEST(Evaluate, ConstantPredictorOnDecayingDiffusion) {
  auto spec = SystemSpec::defaults(SystemId::dr);
  spec.forcing = systems::ForcingTemplate::none;
  systems::GenConfig gen;
  gen.n_trajectories = 4;
  gen.n_times = 11;
  gen.grid = spectral::Grid::line(16, 1.0);
  gen.grf.output_scale = {0.0, 0.0};
  gen.initial.kind = systems::InitialCondition::Kind::modes;
  auto ds = systems::generate_dataset(spec, gen, 14);
  auto frozen = [](double, const Field& s, const Field&, Field& out) { out = Field::Zero(s.rows(), s.cols()); };
  ode::SolveConfig sc;
  sc.method = ode::Method::dopri5;
  auto m = evaluate_field(frozen, ds, sc);
  double sum = 0;
  std::size_t count = 0;
  for (const auto& tr : ds.trajectories)
    for (const auto& s : tr.states) {
      sum += (s - tr.states[0]).squaredNorm();
      count += static_cast<std::size_t>(s.size());
    }
  EXPECT_NEAR(m.mse, sum / count, 1e-15);
  EXPECT_GT(m.mse, 0.0);
}

TEST(Evaluate, BlowUpIsFlagged) {
  auto ds = ode_dataset(3, 15);
  auto explode = [](double, const Field& s, const Field&, Field& out) { out = (s.array().square() + 10.0).matrix(); };
  ode::SolveConfig sc;
  sc.method = ode::Method::dopri5;
  auto m = evaluate_field(explode, ds, sc);
  EXPECT_EQ(m.blowups, 3u);
  EXPECT_TRUE(std::isinf(m.mse));
}

TEST(Bifurcation, ExactRiccatiFixedPoints) {
  auto ds = ode_dataset(2, 16);
  auto model = fresh_model(ds);
  set_exact(model);
  model.use_genn = false;
  std::vector<double> us{0.25, 1.0, 4.0, -1.0};
  ode::SolveConfig sc;
  sc.method = ode::Method::dopri5;
  sc.blowup_threshold = 1e6;
  auto pts = bifurcation_sweep(model, us, Field::Constant(1, 1, 0.5), 20.0, 50, sc);
  ASSERT_EQ(pts.size(), 4u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(pts[i].blew_up);
    EXPECT_NEAR(pts[i].state[0], std::sqrt(us[i]), 1e-4);
    EXPECT_NEAR(pts[i].radius, std::sqrt(us[i]), 1e-3);
  }
  EXPECT_TRUE(pts[3].blew_up);
}
