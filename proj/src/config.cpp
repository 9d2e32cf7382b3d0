#include "snode/config.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <fmt/core.h>

#include "json_util.hpp"
#include "snode/dataset_io.hpp"
#include "snode/rng.hpp"

namespace snode::config {

using detail::json;
using systems::SystemId;

std::uint64_t Config::test_seed() const { return test.seed ? *test.seed : substream(seed, {40}); }

systems::GenConfig Config::test_gen() const {
  systems::GenConfig g = data;
  g.n_trajectories = test.n_trajectories;
  g.noise = 0.0;
  if (test.points > 0)
    for (auto& n : g.grid.n) n = test.points;
  if (test.refine > 0) g.refine = test.refine;
  return g;
}

void Config::validate() const {
  if (profile.empty()) throw ConfigError("profile must not be empty");
  data.validate(system);
  if (test.n_trajectories < 1) throw ConfigError("test.n_trajectories must be at least 1");
  if (test.points < 0) throw ConfigError("test.points must be non-negative");
  if (test.points > 0 && system.spatial_dim() == 0) throw ConfigError("test.points applies to PDE systems only");
  if (test.refine < 0) throw ConfigError("test.refine must be non-negative");
  test_gen().validate(system);
  dictionary_for(system, model);
  if (model.hidden_layers < 0) throw ConfigError("model.hidden_layers must be non-negative");
  for (int w : model.genn_hidden)
    if (w < 1) throw ConfigError("model.genn_hidden widths must be positive");
  if (!(model.init_std >= 0.0)) throw ConfigError("model.init_std must be non-negative");
  train.validate();
  training::parse_pipeline(stages);
  eval.validate();
  if (!(bifurcation.u_max >= bifurcation.u_min)) throw ConfigError("bifurcation.u_max must be >= u_min");
  if (bifurcation.count < 1) throw ConfigError("bifurcation.count must be at least 1");
  if (!(bifurcation.t_end > 0.0)) throw ConfigError("bifurcation.t_end must be positive");
  if (bifurcation.samples < 4) throw ConfigError("bifurcation.samples must be at least 4");
  if (bifurcation.initial.size() != static_cast<std::size_t>(system.state_channels()))
    throw ConfigError(fmt::format("bifurcation.initial needs {} value(s)", system.state_channels()));
}

std::vector<std::string> profiles() { return {"desk", "paper"}; }

namespace {

void common_defaults(Config& c) {
  c.eval.method = ode::Method::dopri5;
  c.eval.rtol = 1e-6;
  c.eval.atol = 1e-6;
  c.train.alpha_finetune = 0.0;
  c.test.n_trajectories = 20;
}

void ode_family(Config& c, bool paper) {
  auto& d = c.data;
  d.n_trajectories = paper ? 1000 : 100;
  d.t0 = 0.0;
  d.t1 = 5.0;
  d.n_times = 101;
  d.grf.mean = 0.0;
  d.grf.length_scale = {0.2, 2.0};
  d.grf.output_scale = {0.2, 1.0};
  d.initial.kind = systems::InitialCondition::Kind::uniform;
  d.initial.range = {-1.0, 1.0};
  c.model.hidden_layers = 3;
  c.model.genn_hidden = {32, 32};
  c.train.alpha = 1e-4;
  c.train.stage1 = {paper ? 3000 : 2000, 3e-3, 0};
  c.train.stage2 = {paper ? 200 : 20, 1e-4, 0};
  c.train.stage3 = {paper ? 200 : 20, 1e-3, 0};
  c.bifurcation.t_end = 50.0;
}

}  // namespace

Config preset(SystemId id, const std::string& profile) {
  if (profile != "desk" && profile != "paper") throw ConfigError("unknown profile '" + profile + "' (desk, paper)");
  const bool paper = profile == "paper";
  Config c;
  c.profile = profile;
  c.system = systems::SystemSpec::defaults(id);
  common_defaults(c);
  auto& d = c.data;
  auto& t = c.train;
  switch (id) {
    case SystemId::ode_nonlinear:
      d.n_trajectories = paper ? 1000 : 200;
      d.t0 = 0.0;
      d.t1 = 1.0;
      d.n_times = 101;
      d.grf.mean = 2.0;
      d.grf.length_scale = {0.2, 2.0};
      d.grf.output_scale = {0.0, 5.0};
      d.initial.range = {0.0, 1.0};
      c.model.hidden_layers = 3;
      c.model.genn_hidden = {32, 32};
      t.alpha = 0.01;
      t.stage1 = {1000, 1e-2, 0};
      t.stage2 = {paper ? 200 : 30, 1e-4, 0};
      t.stage3 = {paper ? 200 : 20, 1e-3, 0};
      c.bifurcation = {-2.0, 2.0, 21, 20.0, 200, {0.5}};
      break;
    case SystemId::saddle_node:
      ode_family(c, paper);
      c.bifurcation = {-3.0, 3.0, 31, 50.0, 200, {-2.0}};
      break;
    case SystemId::pitchfork:
      ode_family(c, paper);
      c.bifurcation = {-1.0, 2.0, 31, 50.0, 200, {0.1}};
      break;
    case SystemId::hopf:
      ode_family(c, paper);
      d.t1 = 10.0;
      d.grf.output_scale = {0.3, 1.0};
      c.model.hidden_layers = 4;
      t.stage1 = {paper ? 4000 : 3000, 3e-3, 0};
      c.bifurcation = {-0.5, 1.0, 16, 100.0, 400, {0.1, 0.0}};
      break;
    case SystemId::dr:
      d.n_trajectories = paper ? 1000 : 200;
      d.grid = spectral::Grid::line(32, 1.0);
      d.t0 = 0.0;
      d.t1 = 1.0;
      d.n_times = 51;
      d.grf.mean = 0.0;
      d.grf.length_scale = {0.2, 2.0};
      d.grf.output_scale = {0.0, 10.0};
      d.initial.kind = systems::InitialCondition::Kind::fixed;
      d.initial.values = {0.0};
      c.test.points = paper ? 128 : 0;
      c.model.hidden_layers = 3;
      c.model.genn_hidden = paper ? std::vector<int>{64, 64} : std::vector<int>{16, 16};
      t.alpha = 0.01;
      t.stage1 = {paper ? 1000 : 300, 1e-2, 0};
      t.stage2 = paper ? training::StageSettings{200, 1e-4, 120} : training::StageSettings{40, 1e-4, 0};
      t.stage3 = paper ? training::StageSettings{200, 1e-3, 120} : training::StageSettings{20, 1e-3, 0};
      t.substeps = 2;
      c.bifurcation = {-10.0, 10.0, 21, 1.0, 50, {0.0}};
      break;
    case SystemId::ks:
      d.n_trajectories = paper ? 1000 : 30;
      d.grid = spectral::Grid::line(32, 32.0 * std::numbers::pi);
      d.refine = 8;
      d.t0 = 0.0;
      d.t1 = paper ? 20.0 : 2.0;
      d.n_times = paper ? 2001 : 201;
      d.grf.mean = 3.0;
      d.grf.length_scale = {0.2, 2.0};
      d.grf.output_scale = {0.2, 0.5};
      d.initial.kind = systems::InitialCondition::Kind::modes;
      d.initial.max_mode = 4;
      d.initial.amplitude = 1.0;
      c.test.n_trajectories = 10;
      c.test.points = 128;
      c.test.refine = 2;
      c.model.hidden_layers = 3;
      c.model.genn_hidden = {16, 16};
      t.alpha = 1e-4;
      t.stage1 = {1000, 1e-2, 0};
      t.stage2 = {paper ? 200 : 10, 1e-4, 0};
      t.stage3 = {paper ? 200 : 10, 1e-3, 0};
      c.stages = "1-2";
      c.bifurcation = {0.5, 3.0, 6, 2.0, 40, {0.0}};
      break;
    case SystemId::ns:
      d.n_trajectories = paper ? 1000 : 20;
      d.grid = spectral::Grid::plane(paper ? 32 : 16, paper ? 32 : 16, 2.0, 2.0);
      d.refine = 2;
      d.t0 = 0.0;
      d.t1 = 1.0;
      d.n_times = 51;
      d.grf.mean = 0.0;
      d.grf.length_scale = {0.2, 2.0};
      d.grf.output_scale = {0.5, 2.0};
      d.initial.kind = systems::InitialCondition::Kind::modes;
      d.initial.max_mode = 4;
      d.initial.amplitude = 1.0;
      c.test.n_trajectories = 5;
      c.model.hidden_layers = 2;
      c.model.genn_hidden = {16, 16};
      t.alpha = 1e-4;
      t.stage1 = {1500, 1e-2, 0};
      t.stage2 = {paper ? 200 : 10, 1e-4, 0};
      t.stage3 = {paper ? 200 : 10, 1e-3, 0};
      c.stages = "1-2";
      c.bifurcation = {-2.0, 2.0, 5, 1.0, 20, {0.0}};
      break;
  }
  return c;
}

namespace {

std::string kind_name(const json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

// Reads the keys of one JSON object, rejecting unknown keys and type mismatches.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object, got {}", where(), kind_name(j_)));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (auto* v = raw(key)) out = as_number(*v, child(key));
  }
  void integer(const std::string& key, int& out) {
    if (auto* v = raw(key)) out = as_int(*v, child(key));
  }
  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (auto* v = raw(key)) out = as_u64(*v, child(key));
  }
  void size(const std::string& key, std::size_t& out) {
    if (auto* v = raw(key)) out = static_cast<std::size_t>(as_u64(*v, child(key)));
  }
  void boolean(const std::string& key, bool& out) {
    if (auto* v = raw(key)) {
      if (!v->is_boolean()) mismatch(child(key), "boolean", *v);
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (auto* v = raw(key)) out = as_string(*v, child(key));
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (auto* v = raw(key)) {
      if (!v->is_array()) mismatch(child(key), "array of numbers", *v);
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_number((*v)[i], fmt::format("{}[{}]", child(key), i)));
    }
  }
  void integers(const std::string& key, std::vector<int>& out) {
    if (auto* v = raw(key)) {
      if (!v->is_array()) mismatch(child(key), "array of integers", *v);
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_int((*v)[i], fmt::format("{}[{}]", child(key), i)));
    }
  }
  void range(const std::string& key, systems::Range& out) {
    if (auto* v = raw(key)) {
      if (!v->is_array() || v->size() != 2) mismatch(child(key), "[lo, hi]", *v);
      out.lo = as_number((*v)[0], child(key) + "[0]");
      out.hi = as_number((*v)[1], child(key) + "[1]");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("unknown key '{}'", child(it.key())));
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) mismatch(path, "number", v);
    return v.get<double>();
  }
  static int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) mismatch(path, "integer", v);
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ConfigError(fmt::format("{}: integer out of range", path));
    return static_cast<int>(x);
  }
  static std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) throw ConfigError(fmt::format("{}: must be non-negative", path));
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    mismatch(path, "non-negative integer", v);
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) mismatch(path, "string", v);
    return v.get<std::string>();
  }
  [[noreturn]] static void mismatch(const std::string& path, const char* expected, const json& v) {
    throw ConfigError(fmt::format("{}: expected {}, got {}", path, expected, kind_name(v)));
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Parse>
auto enum_value(const std::string& text, const std::string& path, Parse parse) {
  try {
    return parse(text);
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

void read_system(Section& s, systems::SystemSpec& sys) {
  s.number("theta1", sys.theta1);
  s.number("theta2", sys.theta2);
  s.number("diffusion", sys.diffusion);
  s.number("reaction", sys.reaction);
  s.number("viscosity", sys.viscosity);
  std::string forcing;
  s.string("forcing", forcing);
  if (!forcing.empty()) sys.forcing = enum_value(forcing, s.child("forcing"), systems::parse_forcing);
  s.finish();
}

void read_data(Section& s, systems::GenConfig& g) {
  s.integer("n_trajectories", g.n_trajectories);
  s.number("t0", g.t0);
  s.number("t1", g.t1);
  s.integer("n_times", g.n_times);
  if (auto* v = s.raw("grid")) {
    Section gs(*v, s.child("grid"));
    gs.integer("dim", g.grid.dim);
    gs.integers("n", g.grid.n);
    gs.numbers("length", g.grid.length);
    gs.finish();
  }
  if (auto* v = s.raw("grf")) {
    Section gs(*v, s.child("grf"));
    gs.number("mean", g.grf.mean);
    gs.range("length_scale", g.grf.length_scale);
    gs.range("output_scale", g.grf.output_scale);
    gs.integer("n_samples", g.grf.n_samples);
    gs.finish();
  }
  if (auto* v = s.raw("initial")) {
    Section is(*v, s.child("initial"));
    std::string kind;
    is.string("kind", kind);
    if (!kind.empty()) g.initial.kind = enum_value(kind, is.child("kind"), systems::parse_initial_kind);
    is.range("range", g.initial.range);
    is.integer("max_mode", g.initial.max_mode);
    is.number("amplitude", g.initial.amplitude);
    is.numbers("values", g.initial.values);
    is.finish();
  }
  s.number("rtol", g.rtol);
  s.number("atol", g.atol);
  s.number("pde_dt", g.pde_dt);
  s.number("noise", g.noise);
  s.integer("refine", g.refine);
  s.finish();
}

void read_stage(Section& parent, const std::string& key, training::StageSettings& st) {
  if (auto* v = parent.raw(key)) {
    Section s(*v, parent.child(key));
    s.integer("epochs", st.epochs);
    s.number("lr", st.lr);
    s.integer("switch_epoch", st.switch_epoch);
    s.finish();
  }
}

void read_train(Section& s, training::TrainConfig& t) {
  s.number("alpha", t.alpha);
  s.number("alpha_finetune", t.alpha_finetune);
  s.number("l1_warmup", t.l1_warmup);
  s.number("beta1", t.beta1);
  s.number("beta2", t.beta2);
  s.number("eps", t.eps);
  read_stage(s, "stage1", t.stage1);
  read_stage(s, "stage2", t.stage2);
  read_stage(s, "stage3", t.stage3);
  s.integer("batch_size", t.batch_size);
  std::string td;
  s.string("time_derivative", td);
  if (!td.empty()) t.time_derivative = enum_value(td, s.child("time_derivative"), spectral::parse_time_derivative);
  s.number("horizon_threshold", t.horizon_threshold);
  s.integer("max_horizon", t.max_horizon);
  s.integer("substeps", t.substeps);
  s.integer("val_horizon", t.val_horizon);
  s.number("val_fraction", t.val_fraction);
  s.numbers("lr_milestones", t.lr_milestones);
  s.number("lr_decay", t.lr_decay);
  s.integer("max_failures", t.max_failures);
  s.boolean("keep_best", t.keep_best);
  s.number("extract_threshold", t.extract_threshold);
  s.finish();
}

void read_solver(Section& s, ode::SolveConfig& c) {
  std::string method;
  s.string("method", method);
  if (!method.empty()) c.method = enum_value(method, s.child("method"), ode::parse_method);
  s.number("dt", c.dt);
  s.number("rtol", c.rtol);
  s.number("atol", c.atol);
  s.number("initial_dt", c.initial_dt);
  s.size("max_steps", c.max_steps);
  s.number("blowup_threshold", c.blowup_threshold);
  s.finish();
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

Config parse_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is one past the offending character
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(fmt::format("{}:{}:{}: syntax error: {}", source, line, col, e.what()));
  }
  try {
    Section top(j, "");
    const json* sys = top.raw("system");
    if (!sys) throw ConfigError("missing required key 'system'");
    std::string id;
    if (sys->is_string()) {
      id = sys->get<std::string>();
    } else if (sys->is_object()) {
      if (!sys->contains("id")) throw ConfigError("missing required key 'system.id'");
      id = Section::as_string(sys->at("id"), "system.id");
    } else {
      Section::mismatch("system", "string or object", *sys);
    }
    std::string profile = "desk";
    top.string("profile", profile);
    Config c = preset(enum_value(id, "system", systems::parse_system), profile);
    if (sys->is_object()) {
      Section ss(*sys, "system");
      ss.raw("id");
      read_system(ss, c.system);
    }
    top.unsigned64("seed", c.seed);
    if (auto* v = top.raw("data")) {
      Section s(*v, "data");
      read_data(s, c.data);
    }
    if (auto* v = top.raw("test")) {
      Section s(*v, "test");
      s.integer("n_trajectories", c.test.n_trajectories);
      if (auto* sv = s.raw("seed"); sv && !sv->is_null()) c.test.seed = Section::as_u64(*sv, "test.seed");
      s.integer("points", c.test.points);
      s.integer("refine", c.test.refine);
      s.finish();
    }
    if (auto* v = top.raw("model")) {
      Section s(*v, "model");
      s.integer("hidden_layers", c.model.hidden_layers);
      s.integer("max_order", c.model.max_order);
      s.integer("stream_terms", c.model.stream_terms);
      s.integers("genn_hidden", c.model.genn_hidden);
      s.number("init_std", c.model.init_std);
      s.finish();
    }
    if (auto* v = top.raw("train")) {
      Section s(*v, "train");
      read_train(s, c.train);
    }
    top.string("stages", c.stages);
    if (auto* v = top.raw("eval")) {
      Section s(*v, "eval");
      read_solver(s, c.eval);
    }
    if (auto* v = top.raw("bifurcation")) {
      Section s(*v, "bifurcation");
      s.number("u_min", c.bifurcation.u_min);
      s.number("u_max", c.bifurcation.u_max);
      s.integer("count", c.bifurcation.count);
      s.number("t_end", c.bifurcation.t_end);
      s.integer("samples", c.bifurcation.samples);
      s.numbers("initial", c.bifurcation.initial);
      s.finish();
    }
    top.finish();
    c.train.seed = c.seed;
    try {
      c.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    return c;
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.what()));
  }
}

Config load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_text(path), path.string());
}

std::string to_json(const Config& c) {
  const auto& d = c.data;
  const auto& t = c.train;
  auto stage = [](const training::StageSettings& s) {
    return json{{"epochs", s.epochs}, {"lr", s.lr}, {"switch_epoch", s.switch_epoch}};
  };
  json sys = detail::to_json(c.system);
  json j;
  j["system"] = sys;
  j["profile"] = c.profile;
  j["seed"] = c.seed;
  j["data"] = {
      {"n_trajectories", d.n_trajectories},
      {"t0", d.t0},
      {"t1", d.t1},
      {"n_times", d.n_times},
      {"grid", detail::to_json(d.grid)},
      {"grf",
       {{"mean", d.grf.mean},
        {"length_scale", {d.grf.length_scale.lo, d.grf.length_scale.hi}},
        {"output_scale", {d.grf.output_scale.lo, d.grf.output_scale.hi}},
        {"n_samples", d.grf.n_samples}}},
      {"initial",
       {{"kind", systems::to_string(d.initial.kind)},
        {"range", {d.initial.range.lo, d.initial.range.hi}},
        {"max_mode", d.initial.max_mode},
        {"amplitude", d.initial.amplitude},
        {"values", d.initial.values}}},
      {"rtol", d.rtol},
      {"atol", d.atol},
      {"pde_dt", d.pde_dt},
      {"noise", d.noise},
      {"refine", d.refine},
  };
  j["test"] = {{"n_trajectories", c.test.n_trajectories},
               {"seed", c.test.seed ? json(*c.test.seed) : json(nullptr)},
               {"points", c.test.points},
               {"refine", c.test.refine}};
  j["model"] = {{"hidden_layers", c.model.hidden_layers},
                {"max_order", c.model.max_order},
                {"stream_terms", c.model.stream_terms},
                {"genn_hidden", c.model.genn_hidden},
                {"init_std", c.model.init_std}};
  j["train"] = {{"alpha", t.alpha},
                {"alpha_finetune", t.alpha_finetune},
                {"l1_warmup", t.l1_warmup},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"stage1", stage(t.stage1)},
                {"stage2", stage(t.stage2)},
                {"stage3", stage(t.stage3)},
                {"batch_size", t.batch_size},
                {"time_derivative", spectral::to_string(t.time_derivative)},
                {"horizon_threshold", t.horizon_threshold},
                {"max_horizon", t.max_horizon},
                {"substeps", t.substeps},
                {"val_horizon", t.val_horizon},
                {"val_fraction", t.val_fraction},
                {"lr_milestones", t.lr_milestones},
                {"lr_decay", t.lr_decay},
                {"max_failures", t.max_failures},
                {"keep_best", t.keep_best},
                {"extract_threshold", t.extract_threshold}};
  j["stages"] = c.stages;
  j["eval"] = detail::to_json(c.eval);
  j["bifurcation"] = {{"u_min", c.bifurcation.u_min},     {"u_max", c.bifurcation.u_max},
                      {"count", c.bifurcation.count},     {"t_end", c.bifurcation.t_end},
                      {"samples", c.bifurcation.samples}, {"initial", c.bifurcation.initial}};
  return j.dump(2) + "\n";
}

}  // namespace snode::config
