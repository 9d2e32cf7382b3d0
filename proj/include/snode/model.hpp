#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snode/genn.hpp"
#include "snode/odesolve.hpp"
#include "snode/symnet.hpp"
#include "snode/systems.hpp"

namespace snode {

/// Architecture choices for a new model.
struct ModelOptions {
  int hidden_layers = 3;          // SymNet K
  int max_order = -1;             // derivative order q; -1 uses the system's own order
  int stream_terms = -1;          // -1 auto (NS only), 0 off, 1 on
  std::vector<int> genn_hidden{64, 64};
  double init_std = 0.01;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

symnet::DictionarySpec dictionary_for(const systems::SystemSpec& system, const ModelOptions& opts);

/// The trained artifact: F = F1 (SymNet) + F2 (GeNN), both fed the dictionary.
struct ModelBundle {
  systems::SystemSpec system;
  spectral::Grid grid;  // training grid
  symnet::DictionarySpec dictionary;
  bool use_symnet = true;
  bool use_genn = true;
  symnet::SymNetParams symnet;
  genn::GeNNParams genn;
  ode::SolveConfig solver;  // used by eval / predict

  static ModelBundle create(const systems::SystemSpec& system, const spectral::Grid& grid, const ModelOptions& opts,
                            std::uint64_t seed);
};

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const ModelBundle& m);
ModelBundle model_from_json(const std::string& text);
void save_model(const ModelBundle& m, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

enum class Trainable { none, symnet, genn };

/// The model's vector field on a given grid (the training grid or a finer one).
/// Parameter gradients refer to the selected network only.
class ModelField : public ode::ParametricField {
 public:
  ModelField(const ModelBundle& model, const spectral::Grid& grid, Trainable trainable = Trainable::none);

  std::size_t parameter_count() const override;
  void evaluate(double t, const Field& s, const Field& u, Field& out) const override;
  void vjp(double t, const Field& s, const Field& u, const Field& upstream, std::span<double> grad_params,
           Field& grad_state) const override;

  const symnet::DictionaryBuilder& builder() const { return builder_; }

 private:
  const ModelBundle& model_;
  symnet::DictionaryBuilder builder_;
  Trainable trainable_;
};

}  // namespace snode
