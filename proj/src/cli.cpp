#include "snode/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "json_util.hpp"
#include "snode/config.hpp"
#include "snode/dataset_io.hpp"
#include "snode/model.hpp"
#include "snode/training.hpp"

namespace snode::cli {

namespace fs = std::filesystem;
using detail::json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::string config_path;
  std::string system;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  // command specific
  std::string stages;
  std::optional<double> noise;
  std::optional<double> threshold;
  int grid = 0;
  std::string data;
  std::string model;
  std::string initial;
  std::string param;
  int samples = 101;
};

// Removes everything registered unless commit() is called.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) fs::remove_all(*it, ec);
  }
  // Registers a path only when it does not exist yet, so earlier results survive.
  fs::path track(const fs::path& p) {
    if (!fs::exists(p)) paths_.push_back(p);
    return p;
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

fs::path out_root() {
  const char* env = std::getenv(kOutRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path run_dir(const Options& o, const config::Config& c) {
  if (!o.out.empty()) return o.out;
  return out_root() / fmt::format("{}-{}-seed{}", systems::to_string(c.system.id), c.profile, c.seed);
}

config::Config resolve_config(const Options& o) {
  config::Config c;
  if (!o.config_path.empty()) {
    c = config::load_config(o.config_path);
  } else if (!o.out.empty() && fs::exists(fs::path(o.out) / "config.json")) {
    c = config::load_config(fs::path(o.out) / "config.json");
  } else if (!o.system.empty()) {
    try {
      c = config::preset(systems::parse_system(o.system), o.profile);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  } else {
    throw UsageError("give --config PATH, --system NAME, or an --out directory holding config.json");
  }
  if (o.seed) c.seed = *o.seed;
  c.train.seed = c.seed;
  c.train.threads = o.threads;
  if (o.noise) c.data.noise = *o.noise;
  if (!o.stages.empty()) c.stages = o.stages;
  if (o.threshold) c.train.extract_threshold = *o.threshold;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json manifest(const std::string& command, const config::Config& c, const std::vector<std::string>& args) {
  json m;
  m["command"] = command;
  m["tool"] = "snode";
  m["tool_version"] = kToolVersion;
  m["arguments"] = args;
  m["seed"] = c.seed;
  m["test_seed"] = c.test_seed();
  m["config"] = json::parse(config::to_json(c));
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) { return io::format_double(v); }

fs::path default_model(const Options& o, const fs::path& dir) { return o.model.empty() ? dir / "model.json" : fs::path(o.model); }

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(fmt::format("{} not found: {}", what, p.string()));
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto dir = run_dir(o, c);
  OutputGuard guard;
  fs::create_directories(dir.parent_path().empty() ? fs::path(".") : dir.parent_path());
  guard.track(dir);
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();

  auto train = systems::generate_dataset(c.system, c.data, c.seed, o.threads);
  train.config_echo = config::to_json(c);
  auto test = systems::generate_dataset(c.system, c.test_gen(), c.test_seed(), o.threads);
  test.config_echo = train.config_echo;

  io::save_dataset(train, guard.track(dir / "data" / "train"));
  io::save_dataset(test, guard.track(dir / "data" / "test"));
  io::write_text(guard.track(dir / "config.json"), config::to_json(c));
  auto m = manifest("gen", c, args);
  m["train"] = {{"trajectories", train.trajectories.size()}, {"dropped", train.dropped}, {"noise", train.noise}};
  m["test"] = {{"trajectories", test.trajectories.size()}, {"dropped", test.dropped}};
  m["seconds"] = seconds_since(t0);
  io::write_text(guard.track(dir / "gen_manifest.json"), m.dump(2) + "\n");
  guard.commit();
  out << fmt::format("generated {} training and {} test trajectories in {}\n", train.trajectories.size(),
                     test.trajectories.size(), dir.string());
  return 0;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto dir = run_dir(o, c);
  const fs::path data = o.data.empty() ? dir / "data" / "train" : fs::path(o.data);
  require_file(data / "manifest.json", "training data");
  const auto ds = io::load_dataset(data);
  if (ds.system.id != c.system.id) throw UsageError("training data belongs to a different system");
  const auto pipeline = training::parse_pipeline(c.stages);

  OutputGuard guard;
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  auto model = ModelBundle::create(c.system, ds.grid, c.model, c.seed);
  model.solver = c.eval;
  const auto report = training::train_model(ds, model, c.train, pipeline);

  save_model(model, guard.track(dir / "model.json"));
  io::write_text(guard.track(dir / "train_history.csv"), training::report_csv(report));
  io::write_text(guard.track(dir / "train_summary.json"), training::report_json(report));
  std::string eq;
  for (std::size_t i = 0; i < report.equations.size(); ++i) eq += fmt::format("ds{}/dt = {}\n", i, report.equations[i]);
  io::write_text(guard.track(dir / "equations.txt"), eq);
  if (!fs::exists(dir / "config.json")) io::write_text(guard.track(dir / "config.json"), config::to_json(c));
  auto m = manifest("train", c, args);
  m["stages"] = training::to_string(pipeline);
  m["data"] = data.string();
  m["seconds"] = seconds_since(t0);
  io::write_text(guard.track(dir / "train_manifest.json"), m.dump(2) + "\n");
  guard.commit();
  out << eq;
  out << fmt::format("trained stages {} in {:.1f} s; model written to {}\n", training::to_string(pipeline),
                     seconds_since(t0), (dir / "model.json").string());
  return 0;
}

int cmd_eval(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto c = resolve_config(o);
  const auto dir = run_dir(o, c);
  const auto model_path = default_model(o, dir);
  require_file(model_path, "model");
  const auto model = load_model(model_path);
  if (model.system.id != c.system.id) throw UsageError("model belongs to a different system");

  systems::Dataset ds;
  std::string source;
  if (o.grid > 0) {
    if (c.system.spatial_dim() == 0) throw UsageError("--grid applies to PDE systems only");
    auto g = c.test_gen();
    for (auto& n : g.grid.n) n = o.grid;
    ds = systems::generate_dataset(c.system, g, c.test_seed(), o.threads);
    source = fmt::format("regenerated test set at {} points per axis", o.grid);
  } else {
    const fs::path data = o.data.empty() ? dir / "data" / "test" : fs::path(o.data);
    require_file(data / "manifest.json", "test data");
    ds = io::load_dataset(data);
    source = data.string();
  }
  if (ds.system.id != model.system.id) throw UsageError("dataset and model belong to different systems");

  OutputGuard guard;
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto metrics = training::evaluate_mse(model, ds, c.eval, o.threads);
  const double one_step = training::one_step_mse(model, ds, c.eval, o.threads);
  const std::string suffix = o.grid > 0 ? fmt::format("_grid{}", o.grid) : "";

  std::string csv = "grid,trajectories,mse,normalized_mse,one_step_mse,blowups\n";
  csv += fmt::format("{},{},{},{},{},{}\n", ds.grid.size(), ds.trajectories.size(), num(metrics.mse),
                     num(metrics.normalized_mse), num(one_step), metrics.blowups);
  io::write_text(guard.track(dir / ("eval" + suffix + ".csv")), csv);
  std::string per = "trajectory,mse,blew_up\n";
  for (std::size_t i = 0; i < metrics.per_trajectory.size(); ++i)
    per += fmt::format("{},{},{}\n", i, num(metrics.per_trajectory[i]), metrics.blown_up[i] ? 1 : 0);
  io::write_text(guard.track(dir / ("eval" + suffix + "_trajectories.csv")), per);
  auto m = manifest("eval", c, args);
  m["model"] = model_path.string();
  m["data"] = source;
  m["seconds"] = seconds_since(t0);
  io::write_text(guard.track(dir / ("eval" + suffix + "_manifest.json")), m.dump(2) + "\n");
  guard.commit();
  out << fmt::format("mse {} (normalized {}), one-step mse {}, blow-ups {}\n", num(metrics.mse),
                     num(metrics.normalized_mse), num(one_step), metrics.blowups);
  return 0;
}

// Commands below need only a model; the config is optional.
std::optional<config::Config> optional_config(const Options& o) {
  if (o.config_path.empty() && o.system.empty() && (o.out.empty() || !fs::exists(fs::path(o.out) / "config.json")))
    return std::nullopt;
  return resolve_config(o);
}

fs::path model_dir(const Options& o, const std::optional<config::Config>& c) {
  if (!o.out.empty()) return o.out;
  if (!o.model.empty()) return fs::path(o.model).parent_path().empty() ? fs::path(".") : fs::path(o.model).parent_path();
  if (c) return run_dir(o, *c);
  throw UsageError("give --out DIR or --model PATH");
}

int cmd_extract(const Options& o, std::ostream& out) {
  const auto c = optional_config(o);
  const auto dir = model_dir(o, c);
  const auto model_path = default_model(o, dir);
  require_file(model_path, "model");
  const auto model = load_model(model_path);
  if (!model.use_symnet) throw UsageError("the model has no SymNet part to extract");
  const double threshold = o.threshold ? *o.threshold : c ? c->train.extract_threshold : 1e-3;
  if (!(threshold >= 0.0)) throw UsageError("--threshold must be non-negative");
  const auto exprs = symnet::extract_equation(model.symnet, model.dictionary, threshold);
  OutputGuard guard;
  std::string text;
  json terms = json::array();
  for (std::size_t i = 0; i < exprs.size(); ++i) {
    text += fmt::format("ds{}/dt = {}\n", i, exprs[i].text);
    json t = json::array();
    for (const auto& term : exprs[i].terms) t.push_back({{"label", term.label}, {"coefficient", term.coefficient}});
    terms.push_back(t);
  }
  io::write_text(guard.track(dir / "equations.txt"), text);
  json j = {{"threshold", threshold}, {"model", model_path.string()}, {"channels", terms}};
  io::write_text(guard.track(dir / "equations.json"), j.dump(2) + "\n");
  guard.commit();
  out << text;
  return 0;
}

std::vector<std::vector<double>> read_csv_rows(const fs::path& path, bool skip_header) {
  require_file(path, "input file");
  std::istringstream in(io::read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (skip_header && rows.empty() && !header_done) {
      header_done = true;
      char* end = nullptr;
      std::strtod(line.c_str(), &end);
      if (end == line.c_str()) continue;  // column names
    }
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw UsageError(fmt::format("{}:{}: '{}' is not a number", path.string(), lineno, cell));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const auto c = optional_config(o);
  const auto dir = model_dir(o, c);
  const auto model_path = default_model(o, dir);
  require_file(model_path, "model");
  if (o.initial.empty() || o.param.empty()) throw UsageError("predict needs --initial FILE and --param FILE");
  if (o.samples < 2) throw UsageError("--samples must be at least 2");
  const auto model = load_model(model_path);

  // initial state: one row per channel, one column per grid point
  const auto init = read_csv_rows(o.initial, false);
  const auto channels = static_cast<std::size_t>(model.system.state_channels());
  const auto points = model.grid.size();
  if (init.size() != channels) throw UsageError(fmt::format("initial state needs {} row(s), one per channel", channels));
  Field s0(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(points));
  for (std::size_t r = 0; r < channels; ++r) {
    if (init[r].size() != points) throw UsageError(fmt::format("initial state rows need {} value(s)", points));
    for (std::size_t p = 0; p < points; ++p) s0(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) = init[r][p];
  }
  // parameter function: rows "t,u" at uniformly spaced times
  const auto prow = read_csv_rows(o.param, true);
  if (prow.size() < 2) throw UsageError("parameter file needs at least two rows of t,u");
  std::vector<double> kt, kv;
  for (const auto& r : prow) {
    if (r.size() != 2) throw UsageError("parameter file rows must be t,u");
    kt.push_back(r[0]);
    kv.push_back(r[1]);
  }
  grf::ParamFunction pf;
  try {
    pf = grf::fit_spline(kt, kv);
  } catch (const InvalidArgument& e) {
    throw UsageError(fmt::format("parameter file: {}", e.what()));
  }
  std::vector<double> times(static_cast<std::size_t>(o.samples));
  for (int k = 0; k < o.samples; ++k)
    times[static_cast<std::size_t>(k)] = kt.front() + (kt.back() - kt.front()) * k / (o.samples - 1);
  const ModelField field(model, model.grid);
  const auto forcing = systems::make_forcing(model.system, model.grid, pf);
  const auto sol = ode::ode_solve(field.as_vector_field(), s0, times.front(),
                                  std::span<const double>(times).subspan(1), forcing, c ? c->eval : model.solver);
  std::string csv = "t,channel,point,value\n";
  auto emit = [&](double t, const Field& s) {
    for (Eigen::Index ch = 0; ch < s.rows(); ++ch)
      for (Eigen::Index p = 0; p < s.cols(); ++p) csv += fmt::format("{},{},{},{}\n", num(t), ch, p, num(s(ch, p)));
  };
  emit(times.front(), s0);
  for (std::size_t k = 0; k < sol.states.size(); ++k) emit(sol.times[k], sol.states[k]);
  OutputGuard guard;
  io::write_text(guard.track(dir / "prediction.csv"), csv);
  guard.commit();
  out << fmt::format("wrote {} time samples to {}\n", times.size(), (dir / "prediction.csv").string());
  return 0;
}

int cmd_bifurcation(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  auto c = optional_config(o);
  const auto dir = model_dir(o, c);
  const auto model_path = default_model(o, dir);
  require_file(model_path, "model");
  const auto model = load_model(model_path);
  const config::Config cfg = c ? *c : config::preset(model.system.id);
  const auto& sw = cfg.bifurcation;
  std::vector<double> us(static_cast<std::size_t>(sw.count));
  for (int i = 0; i < sw.count; ++i)
    us[static_cast<std::size_t>(i)] = sw.count == 1 ? sw.u_min : sw.u_min + (sw.u_max - sw.u_min) * i / (sw.count - 1);
  Field s0(model.system.state_channels(), static_cast<Eigen::Index>(model.grid.size()));
  for (Eigen::Index ch = 0; ch < s0.rows(); ++ch) s0.row(ch).setConstant(sw.initial.at(static_cast<std::size_t>(ch)));
  const auto pts = training::bifurcation_sweep(model, us, s0, sw.t_end, sw.samples, cfg.eval, o.threads);
  std::string csv = "u,radius";
  for (Eigen::Index ch = 0; ch < s0.rows(); ++ch) csv += fmt::format(",state{}", ch);
  csv += ",blew_up\n";
  for (const auto& p : pts) {
    csv += fmt::format("{},{}", num(p.u), p.blew_up ? "nan" : num(p.radius));
    for (Eigen::Index ch = 0; ch < s0.rows(); ++ch)
      csv += "," + (p.blew_up ? std::string("nan") : num(p.state[static_cast<std::size_t>(ch)]));
    csv += fmt::format(",{}\n", p.blew_up ? 1 : 0);
  }
  OutputGuard guard;
  io::write_text(guard.track(dir / "bifurcation.csv"), csv);
  auto m = manifest("bifurcation", cfg, args);
  m["model"] = model_path.string();
  io::write_text(guard.track(dir / "bifurcation_manifest.json"), m.dump(2) + "\n");
  guard.commit();
  out << fmt::format("swept {} parameter values; wrote {}\n", pts.size(), (dir / "bifurcation.csv").string());
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Symbolic neural ODEs: data generation, training, evaluation and equation extraction", "snode"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON configuration file");
    sub->add_option("--system", o.system, "preset system when no config is given")
        ->check(CLI::IsMember({"ode_nonlinear", "saddle_node", "pitchfork", "hopf", "dr", "ks", "ns"}));
    sub->add_option("--profile", o.profile, "preset profile")->check(CLI::IsMember(config::profiles()));
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--out", o.out, fmt::format("run directory (default: ${}/<system>-<profile>-seed<N>)", kOutRootEnv));
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("gen", "generate training and test datasets");
  common(gen);
  gen->add_option("--noise", o.noise, "relative noise level of the training data")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  train->add_option("--stages", o.stages, "1, 1-2, 1-2-3, e1 or e2")
      ->check(CLI::IsMember({"1", "1-2", "1-2-3", "e1", "e2"}));
  train->add_option("--data", o.data, "training dataset directory");

  auto* eval = app.add_subcommand("eval", "evaluate a model on the test set");
  common(eval);
  eval->add_option("--grid", o.grid, "regenerate the test set at this many points per axis")->check(CLI::PositiveNumber);
  eval->add_option("--data", o.data, "test dataset directory");
  eval->add_option("--model", o.model, "model file");

  auto* extract = app.add_subcommand("extract", "print the learned equations");
  common(extract);
  extract->add_option("--threshold", o.threshold, "drop terms with smaller |coefficient|")->check(CLI::NonNegativeNumber);
  extract->add_option("--model", o.model, "model file");

  auto* predict = app.add_subcommand("predict", "roll out a model from an initial state");
  common(predict);
  predict->add_option("--model", o.model, "model file");
  predict->add_option("--initial", o.initial, "CSV, one row per state channel")->required();
  predict->add_option("--param", o.param, "CSV rows t,u at uniform times")->required();
  predict->add_option("--samples", o.samples, "output time samples");

  auto* bif = app.add_subcommand("bifurcation", "long-time rollouts over constant parameter values");
  common(bif);
  bif->add_option("--model", o.model, "model file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, args, out);
    if (train->parsed()) return cmd_train(o, args, out);
    if (eval->parsed()) return cmd_eval(o, args, out);
    if (extract->parsed()) return cmd_extract(o, out);
    if (predict->parsed()) return cmd_predict(o, out);
    if (bif->parsed()) return cmd_bifurcation(o, args, out);
    err << "error: no command given\n";
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace snode::cli
