#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gen.hpp"
#include "snode/cli.hpp"
#include "snode/config.hpp"
#include "snode/dataset_io.hpp"
#include "snode/error.hpp"
#include "snode/model.hpp"

namespace fs = std::filesystem;
using namespace snode;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("snode_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string str(const std::string& sub = "") const { return (sub.empty() ? path_ : path_ / sub).string(); }

 private:
  fs::path path_;
};

std::string write(const fs::path& p, const std::string& text) {
  io::write_text(p, text);
  return p.string();
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

// small, fast DR run
const char* kTinyDr = R"({
  "system": "dr",
  "seed": 4,
  "data": {"n_trajectories": 12, "n_times": 11, "grid": {"n": [16]}},
  "test": {"n_trajectories": 3},
  "train": {"stage1": {"epochs": 300}, "stage2": {"epochs": 2}, "stage3": {"epochs": 2}},
  "model": {"genn_hidden": [8]}
})";

}  // namespace

TEST(Config, MinimalConfigGetsPresetDefaults) {
  auto c = config::parse_config(R"({"system": "dr", "seed": 3})");
  auto p = config::preset(systems::SystemId::dr);
  p.seed = 3;
  EXPECT_EQ(config::to_json(c), config::to_json(p));
  auto j = json::parse(config::to_json(c));
  for (const char* key : {"data", "train", "model", "eval", "test", "system", "stages", "bifurcation"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["train"]["alpha"], 0.01);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    config::parse_config(R"({"system": "dr", "foo": 1})");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos) << e.what();
  }
  try {
    config::parse_config(R"({"system": "dr", "train": {"stage1": {"epoch": 3}}})");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.stage1.epoch"), std::string::npos) << e.what();
  }
}

TEST(Config, SyntaxErrorHasLineAndColumn) {
  try {
    config::parse_config("{\n  \"system\": \"dr\",\n  \"seed\": ,\n}", "cfg.json");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, TypeMismatch) {
  EXPECT_THROW(config::parse_config(R"({"system": "dr", "seed": "three"})"), ConfigError);
  EXPECT_THROW(config::parse_config(R"({"system": "dr", "train": {"alpha": [1]}})"), ConfigError);
  EXPECT_THROW(config::parse_config(R"({"system": "lorenz"})"), ConfigError);
  EXPECT_THROW(config::parse_config(R"({"seed": 1})"), ConfigError);
}

TEST(Config, ResolvedConfigRoundTrips) {
  for (auto id : {systems::SystemId::ode_nonlinear, systems::SystemId::saddle_node, systems::SystemId::pitchfork,
                  systems::SystemId::hopf, systems::SystemId::dr, systems::SystemId::ks, systems::SystemId::ns})
    for (const auto& profile : config::profiles()) {
      auto c = config::preset(id, profile);
      EXPECT_NO_THROW(c.validate());
      EXPECT_EQ(config::to_json(config::parse_config(config::to_json(c))), config::to_json(c));
    }
}

TEST(Config, SystemObjectOverrides) {
  auto c = config::parse_config(R"({"system": {"id": "saddle_node", "theta1": 1.5}, "stages": "1-2"})");
  EXPECT_EQ(c.system.id, systems::SystemId::saddle_node);
  EXPECT_EQ(c.system.theta1, 1.5);
  EXPECT_EQ(c.system.theta2, -1.0);
  EXPECT_EQ(c.stages, "1-2");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"gen", "--system", "lorenz"}).code, 1);
  EXPECT_EQ(run({"gen"}).code, 1);
  TempDir t("usage");
  EXPECT_EQ(run({"gen", "--config", t.str("missing.json")}).code, 1);
  auto bad = write(t.path() / "bad.json", R"({"system": "dr", "foo": 2})");
  auto r = run({"gen", "--config", bad, "--out", t.str("run")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("foo"), std::string::npos);
  EXPECT_FALSE(fs::exists(t.path() / "run" / "data"));
  EXPECT_EQ(run({"train", "--system", "dr", "--stages", "2-3", "--out", t.str("run")}).code, 1);
}

TEST(Cli, PipelineSmokeAndManifests) {
  TempDir t("smoke");
  auto cfg = write(t.path() / "tiny.json", kTinyDr);
  const auto dir = t.str("run");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  auto tr = run({"train", "--config", cfg, "--out", dir, "--stages", "1-2-3"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  auto ev = run({"eval", "--out", dir});
  ASSERT_EQ(ev.code, 0) << ev.err;
  for (const char* f : {"config.json", "gen_manifest.json", "model.json", "train_history.csv", "train_summary.json",
                        "equations.txt", "train_manifest.json", "eval.csv", "eval_trajectories.csv",
                        "eval_manifest.json", "data/train/manifest.json", "data/test/manifest.json"})
    EXPECT_TRUE(fs::exists(t.path() / "run" / f)) << f;

  auto m = json::parse(slurp(t.path() / "run" / "train_manifest.json"));
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["tool_version"], cli::kToolVersion);
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["config"]["train"]["alpha"], 0.01);
  EXPECT_EQ(m["stages"], "1-2-3");

  // the echoed config reproduces the run
  auto echoed = config::parse_config(m["config"].dump());
  EXPECT_EQ(config::to_json(echoed), slurp(t.path() / "run" / "config.json"));

  auto csv = slurp(t.path() / "run" / "eval.csv");
  EXPECT_EQ(csv.rfind("grid,trajectories,mse,normalized_mse,one_step_mse,blowups\n", 0), 0u);

  // idempotent evaluation
  ASSERT_EQ(run({"eval", "--out", dir}).code, 0);
  EXPECT_EQ(slurp(t.path() / "run" / "eval.csv"), csv);

  // extraction with a threshold
  ASSERT_EQ(run({"extract", "--out", dir, "--threshold", "0.5"}).code, 0);
  auto eq = json::parse(slurp(t.path() / "run" / "equations.json"));
  EXPECT_TRUE(eq.is_object() || eq.is_array());

  // super-resolution evaluation on a regenerated grid
  ASSERT_EQ(run({"eval", "--out", dir, "--grid", "32"}).code, 0);
  auto sr = slurp(t.path() / "run" / "eval_grid32.csv");
  EXPECT_EQ(sr.substr(sr.find('\n') + 1, 3), "32,");
}

TEST(Cli, AlphaOverrideIsEchoed) {
  TempDir t("alpha");
  auto j = json::parse(kTinyDr);
  j["train"]["alpha"] = 0.02;
  j["stages"] = "1";
  auto cfg = write(t.path() / "a.json", j.dump());
  const auto dir = t.str("run");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", dir}).code, 0);
  auto m = json::parse(slurp(t.path() / "run" / "train_manifest.json"));
  EXPECT_EQ(m["config"]["train"]["alpha"], 0.02);
  EXPECT_EQ(m["stages"], "1");
}

TEST(Cli, E2AblationHasZeroResidual) {
  TempDir t("e2");
  auto cfg = write(t.path() / "tiny.json", kTinyDr);
  const auto dir = t.str("run");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", dir, "--stages", "e2"}).code, 0);
  auto model = load_model(t.path() / "run" / "model.json");
  EXPECT_TRUE(model.use_symnet);
  EXPECT_FALSE(model.use_genn);
  snode::testing::Gen gen(801);
  auto r = genn::genn_forward(model.genn, gen.field(model.genn.inputs(), 20));
  EXPECT_EQ(r.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cli, FailedCommandLeavesNoPartialOutputs) {
  TempDir t("guard");
  auto cfg = write(t.path() / "tiny.json", kTinyDr);
  const auto dir = t.str("run");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  auto r = run({"eval", "--out", dir, "--model", t.str("nope.json")});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(t.path() / "run" / "eval.csv"));
  EXPECT_FALSE(fs::exists(t.path() / "run" / "eval_manifest.json"));
}

TEST(Cli, PredictWritesTrajectory) {
  TempDir t("predict");
  auto cfg = write(t.path() / "ode.json", R"({
    "system": "ode_nonlinear",
    "data": {"n_trajectories": 20, "n_times": 21},
    "test": {"n_trajectories": 2},
    "stages": "1",
    "train": {"stage1": {"epochs": 20}}
  })");
  const auto dir = t.str("run");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", dir}).code, 0);
  auto init = write(t.path() / "s0.csv", "0.5\n");
  auto param = write(t.path() / "u.csv", "t,u\n0,1\n0.5,1\n1,1\n1.5,1\n");
  auto r = run({"predict", "--out", dir, "--initial", init, "--param", param, "--samples", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(t.path() / "run" / "prediction.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,channel,point,value");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 7);

  auto short_param = write(t.path() / "u3.csv", "0,1\n1,1\n2,1\n");
  EXPECT_EQ(run({"predict", "--out", dir, "--initial", init, "--param", short_param}).code, 1);
}

TEST(Cli, HopfBifurcationFollowsRadialLaw) {
  TempDir t("hopf");
  const auto dir = t.str("run");
  auto cfg = write(t.path() / "hopf.json", R"({"system": "hopf", "stages": "1"})");
  ASSERT_EQ(run({"gen", "--config", cfg, "--out", dir}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", dir}).code, 0);
  auto r = run({"bifurcation", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(t.path() / "run" / "bifurcation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("u,radius", 0), 0u);
  int checked = 0;
  while (std::getline(csv, line)) {
    double u = 0, radius = 0;
    char comma = 0;
    std::istringstream row(line);
    row >> u >> comma >> radius;
    if (u <= 1e-12) {
      EXPECT_LT(radius, 0.1) << "u = " << u;
    } else {
      EXPECT_NEAR(radius / std::sqrt(u), 1.0, 0.10) << "u = " << u;
    }
    ++checked;
  }
  EXPECT_GE(checked, 10);
}
