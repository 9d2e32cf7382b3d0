#include "snode/model.hpp"

#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "base64.hpp"
#include "json_util.hpp"
#include "snode/rng.hpp"

namespace snode {

symnet::DictionarySpec dictionary_for(const systems::SystemSpec& system, const ModelOptions& opts) {
  symnet::DictionarySpec d;
  d.dim = system.spatial_dim();
  d.state_channels = system.state_channels();
  d.param_channels = system.param_channels();
  d.max_order = opts.max_order >= 0 ? opts.max_order : system.derivative_order();
  d.stream_terms = opts.stream_terms < 0 ? system.id == systems::SystemId::ns : opts.stream_terms == 1;
  d.validate();
  return d;
}

ModelBundle ModelBundle::create(const systems::SystemSpec& system, const spectral::Grid& grid,
                                const ModelOptions& opts, std::uint64_t seed) {
  ModelBundle m;
  m.system = system;
  m.grid = grid;
  m.dictionary = dictionary_for(system, opts);
  const int n = static_cast<int>(m.dictionary.size());
  const int ds = system.state_channels();
  auto rng = make_rng(substream(seed, {11}));
  m.symnet = symnet::SymNetParams::random(opts.hidden_layers, n, ds, rng, opts.init_std);
  auto grng = make_rng(substream(seed, {12}));
  m.genn = genn::GeNNParams::initialized(genn::default_layers(n, ds, opts.genn_hidden), grng);
  m.solver.method = ode::Method::dopri5;
  m.solver.rtol = 1e-6;
  m.solver.atol = 1e-6;
  return m;
}

std::string model_to_json(const ModelBundle& m) {
  using detail::json;
  json j;
  j["format"] = "snode-model";
  j["version"] = kModelFormatVersion;
  j["system"] = detail::to_json(m.system);
  j["grid"] = detail::to_json(m.grid);
  j["dictionary"] = detail::to_json(m.dictionary);
  j["symnet"] = {{"enabled", m.use_symnet},
                 {"hidden_layers", m.symnet.hidden_layers()},
                 {"inputs", m.symnet.inputs()},
                 {"outputs", m.symnet.outputs()},
                 {"values", detail::encode_doubles(m.symnet.values())}};
  j["genn"] = {{"enabled", m.use_genn},
               {"layers", m.genn.layer_sizes()},
               {"activation", "tanh"},
               {"values", detail::encode_doubles(m.genn.values())}};
  j["solver"] = detail::to_json(m.solver);
  return j.dump(2) + "\n";
}

ModelBundle model_from_json(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(fmt::format("model file is not valid JSON: {}", e.what()));
  }
  try {
    if (j.at("format").get<std::string>() != "snode-model") throw Error("not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw Error(fmt::format("unsupported model format version {} (expected {})", version, kModelFormatVersion));
    ModelBundle m;
    m.system = detail::system_from_json(j.at("system"));
    m.grid = detail::grid_from_json(j.at("grid"));
    m.dictionary = detail::dictionary_from_json(j.at("dictionary"));
    const auto& s = j.at("symnet");
    m.use_symnet = s.at("enabled").get<bool>();
    m.symnet = symnet::SymNetParams(s.at("hidden_layers").get<int>(), s.at("inputs").get<int>(),
                                    s.at("outputs").get<int>());
    const auto sv = detail::decode_doubles(s.at("values").get<std::string>());
    if (sv.size() != m.symnet.size()) throw Error("SymNet parameter count does not match its shape");
    std::copy(sv.begin(), sv.end(), m.symnet.values().begin());
    if (m.symnet.inputs() != static_cast<int>(m.dictionary.size()))
      throw Error("SymNet input width does not match the dictionary");
    const auto& g = j.at("genn");
    m.use_genn = g.at("enabled").get<bool>();
    m.genn = genn::GeNNParams(g.at("layers").get<std::vector<int>>());
    const auto gv = detail::decode_doubles(g.at("values").get<std::string>());
    if (gv.size() != m.genn.size()) throw Error("GeNN parameter count does not match its shape");
    std::copy(gv.begin(), gv.end(), m.genn.values().begin());
    m.solver = detail::solve_from_json(j.at("solver"));
    return m;
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed model file: {}", e.what()));
  }
}

void save_model(const ModelBundle& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << model_to_json(m);
  if (!out) throw Error("failed writing " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

ModelField::ModelField(const ModelBundle& model, const spectral::Grid& grid, Trainable trainable)
    : model_(model), builder_(model.dictionary, grid), trainable_(trainable) {
  if (trainable == Trainable::symnet && !model.use_symnet) throw InvalidArgument("SymNet is disabled in this model");
  if (trainable == Trainable::genn && !model.use_genn) throw InvalidArgument("GeNN is disabled in this model");
}

std::size_t ModelField::parameter_count() const {
  switch (trainable_) {
    case Trainable::symnet: return model_.symnet.size();
    case Trainable::genn: return model_.genn.size();
    default: return 0;
  }
}

void ModelField::evaluate(double, const Field& s, const Field& u, Field& out) const {
  RowMatrix dict;
  builder_.build(s, u, dict);
  if (model_.use_symnet) out = symnet::symnet_forward(model_.symnet, dict);
  else out.setZero(s.rows(), s.cols());
  if (model_.use_genn) out += genn::genn_forward(model_.genn, dict);
}

void ModelField::vjp(double, const Field& s, const Field& u, const Field& upstream, std::span<double> grad_params,
                     Field& grad_state) const {
  RowMatrix dict;
  builder_.build(s, u, dict);
  RowMatrix gd = RowMatrix::Zero(dict.rows(), dict.cols());
  RowMatrix part;
  if (model_.use_symnet) {
    std::vector<double> scratch;
    std::span<double> g = grad_params;
    if (trainable_ != Trainable::symnet) {
      scratch.assign(model_.symnet.size(), 0.0);
      g = scratch;
    }
    symnet::symnet_vjp(model_.symnet, dict, upstream, g, &part);
    gd += part;
  }
  if (model_.use_genn) {
    std::vector<double> scratch;
    std::span<double> g = grad_params;
    if (trainable_ != Trainable::genn) {
      scratch.assign(model_.genn.size(), 0.0);
      g = scratch;
    }
    genn::genn_vjp(model_.genn, dict, upstream, g, &part);
    gd += part;
  }
  builder_.state_adjoint(gd, grad_state);
}

}  // namespace snode
