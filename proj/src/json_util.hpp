#pragma once

#include <json.hpp>

#include "snode/error.hpp"
#include "snode/odesolve.hpp"
#include "snode/symnet.hpp"
#include "snode/systems.hpp"

namespace snode::detail {

using nlohmann::json;

inline json to_json(const spectral::Grid& g) { return {{"dim", g.dim}, {"n", g.n}, {"length", g.length}}; }

inline spectral::Grid grid_from_json(const json& j) {
  spectral::Grid g;
  g.dim = j.at("dim").get<int>();
  g.n = j.at("n").get<std::vector<int>>();
  g.length = j.at("length").get<std::vector<double>>();
  g.validate();
  return g;
}

inline json to_json(const systems::SystemSpec& s) {
  return {{"id", systems::to_string(s.id)},     {"theta1", s.theta1},       {"theta2", s.theta2},
          {"diffusion", s.diffusion},           {"reaction", s.reaction},   {"viscosity", s.viscosity},
          {"forcing", systems::to_string(s.forcing)}};
}

inline systems::SystemSpec system_from_json(const json& j) {
  systems::SystemSpec s = systems::SystemSpec::defaults(systems::parse_system(j.at("id").get<std::string>()));
  s.theta1 = j.at("theta1").get<double>();
  s.theta2 = j.at("theta2").get<double>();
  s.diffusion = j.at("diffusion").get<double>();
  s.reaction = j.at("reaction").get<double>();
  s.viscosity = j.at("viscosity").get<double>();
  s.forcing = systems::parse_forcing(j.at("forcing").get<std::string>());
  return s;
}

inline json to_json(const ode::SolveConfig& c) {
  return {{"method", ode::to_string(c.method)}, {"dt", c.dt},
          {"rtol", c.rtol},                     {"atol", c.atol},
          {"initial_dt", c.initial_dt},         {"max_steps", c.max_steps},
          {"blowup_threshold", c.blowup_threshold}};
}

inline ode::SolveConfig solve_from_json(const json& j) {
  ode::SolveConfig c;
  c.method = ode::parse_method(j.at("method").get<std::string>());
  c.dt = j.at("dt").get<double>();
  c.rtol = j.at("rtol").get<double>();
  c.atol = j.at("atol").get<double>();
  c.initial_dt = j.at("initial_dt").get<double>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.blowup_threshold = j.at("blowup_threshold").get<double>();
  c.validate();
  return c;
}

inline json to_json(const symnet::DictionarySpec& d) {
  return {{"dim", d.dim},
          {"state_channels", d.state_channels},
          {"param_channels", d.param_channels},
          {"max_order", d.max_order},
          {"stream_terms", d.stream_terms},
          {"labels", d.labels()}};
}

inline symnet::DictionarySpec dictionary_from_json(const json& j) {
  symnet::DictionarySpec d;
  d.dim = j.at("dim").get<int>();
  d.state_channels = j.at("state_channels").get<int>();
  d.param_channels = j.at("param_channels").get<int>();
  d.max_order = j.at("max_order").get<int>();
  d.stream_terms = j.at("stream_terms").get<bool>();
  d.validate();
  if (j.contains("labels") && j.at("labels").get<std::vector<std::string>>() != d.labels())
    throw Error("stored dictionary labels do not match the canonical order");
  return d;
}

}  // namespace snode::detail
