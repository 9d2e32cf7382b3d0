#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "snode/model.hpp"
#include "snode/odesolve.hpp"
#include "snode/systems.hpp"
#include "snode/training.hpp"

namespace snode::config {

/// Held-out test set. Shares the training set's time grid and samplers.
struct TestSet {
  int n_trajectories = 10;
  std::optional<std::uint64_t> seed;  // unset: derived from the run seed
  int points = 0;                     // per axis; 0 keeps the training resolution
  int refine = 0;                     // 0 keeps the training refine factor

  friend bool operator==(const TestSet&, const TestSet&) = default;
};

/// Constant-parameter sweep for bifurcation diagrams.
struct Sweep {
  double u_min = -1.0;
  double u_max = 1.0;
  int count = 31;
  double t_end = 50.0;
  int samples = 200;
  std::vector<double> initial{0.1};  // one value per state channel, broadcast over the grid

  friend bool operator==(const Sweep&, const Sweep&) = default;
};

struct Config {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  systems::SystemSpec system;
  systems::GenConfig data;
  TestSet test;
  ModelOptions model;
  training::TrainConfig train;
  std::string stages = "1-2-3";
  ode::SolveConfig eval;
  Sweep bifurcation;

  std::uint64_t test_seed() const;
  systems::GenConfig test_gen() const;
  void validate() const;
};

std::vector<std::string> profiles();

/// Built-in configuration for a system ("desk" or "paper" profile).
Config preset(systems::SystemId id, const std::string& profile = "desk");

/// Parses JSON text. "system" selects the preset; every other key overrides it.
/// Errors name the offending key or give line/column for syntax errors.
Config parse_config(const std::string& text, const std::string& source = "config");
Config load_config(const std::filesystem::path& path);

/// Fully resolved configuration, accepted back by parse_config.
std::string to_json(const Config& c);

}  // namespace snode::config
