#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "snode/spectral.hpp"
#include "snode/types.hpp"

namespace snode::symnet {

using spectral::Grid;

/// Number of first-layer symbols for spatial dimension d, state channels d_s,
/// parameter channels d_u and derivative order q (excluding the optional
/// stream-function entries).
std::size_t dictionary_size(int d, int d_s, int d_u, int q);

/// Canonical symbol order: parameters, then states, then spatial derivatives
/// grouped by total order; within one order, multi-indices follow the
/// lexicographic order of their axis strings (xx, xy, yy), then channel.
/// Optional stream-function velocities gamma_x, gamma_y (Lap gamma = -s,
/// 2-d only) come last.
struct DictionarySpec {
  int dim = 0;
  int state_channels = 1;
  int param_channels = 1;
  int max_order = 0;
  bool stream_terms = false;

  struct Entry {
    enum class Kind { param, derivative, stream } kind;
    int channel = 0;
    std::vector<int> orders;  // per axis, for derivative entries (all zero = the state itself)
    int stream_axis = 0;
  };

  std::vector<Entry> entries() const;
  std::vector<std::string> labels() const;
  std::size_t size() const;
  void validate() const;

  friend bool operator==(const DictionarySpec&, const DictionarySpec&) = default;
};

/// Dictionary values (symbols x grid points) for state s and forcing u.
RowMatrix build_dictionary(const Field& s, const Field& u, const Grid& grid, const DictionarySpec& spec);

/// Precomputed spectral multipliers for repeated dictionary evaluation on one grid.
class DictionaryBuilder {
 public:
  DictionaryBuilder(const DictionarySpec& spec, const Grid& grid);

  const DictionarySpec& spec() const { return spec_; }
  const Grid& grid() const { return grid_; }

  void build(const Field& s, const Field& u, RowMatrix& out) const;

  /// Adjoint of the state-dependent part: (d dict / d s)^T grad_dict.
  void state_adjoint(const RowMatrix& grad_dict, Field& grad_state) const;

 private:
  DictionarySpec spec_;
  Grid grid_;
  std::vector<DictionarySpec::Entry> entries_;
  std::shared_ptr<const spectral::Transform> tr_;
  std::vector<std::vector<spectral::Complex>> mult_;  // per entry, empty when not spectral
};

/// Parameters of a K-layer multiplicative network stored in one flat vector:
/// for k = 1..K: W_k (2 x (n + k - 1), row-major) then b_k (2); then W_out
/// (d_s x (n + K)) and b_out (d_s). Layer k reads L_k = [p_{k-1}, ..., p_1, L_1].
class SymNetParams {
 public:
  SymNetParams() = default;
  SymNetParams(int hidden_layers, int inputs, int outputs);

  static SymNetParams random(int hidden_layers, int inputs, int outputs, std::mt19937_64& rng, double stddev = 0.01);

  int hidden_layers() const { return hidden_; }
  int inputs() const { return inputs_; }
  int outputs() const { return outputs_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  Eigen::Map<RowMatrix> weight(int k);  // k in 1..K
  Eigen::Map<const RowMatrix> weight(int k) const;
  Eigen::Map<Eigen::VectorXd> bias(int k);
  Eigen::Map<const Eigen::VectorXd> bias(int k) const;
  Eigen::Map<RowMatrix> output_weight();
  Eigen::Map<const RowMatrix> output_weight() const;
  Eigen::Map<Eigen::VectorXd> output_bias();
  Eigen::Map<const Eigen::VectorXd> output_bias() const;

  std::size_t weight_offset(int k) const;
  std::size_t output_offset() const;
  /// Offset of b_out; entries before it take the L1 penalty.
  std::size_t output_bias_offset() const { return values_.size() - static_cast<std::size_t>(outputs_); }

  friend bool operator==(const SymNetParams&, const SymNetParams&) = default;

 private:
  int hidden_ = 0;
  int inputs_ = 0;
  int outputs_ = 0;
  std::vector<double> values_;
};

/// Magnitude at which intermediate values are reported as overflow.
inline constexpr double kOverflowLimit = 1e12;

/// Output (d_s x points) = W_out L_{K+1} + b_out, applied column-wise.
RowMatrix symnet_forward(const SymNetParams& p, const RowMatrix& dict);

/// grad_params += dLoss/dparams, optional grad_dict = dLoss/ddict, for
/// upstream = dLoss/doutput.
void symnet_vjp(const SymNetParams& p, const RowMatrix& dict, const RowMatrix& upstream,
                std::span<double> grad_params, RowMatrix* grad_dict);

/// alpha * sum |theta| over every entry except b_out.
double l1_penalty(const SymNetParams& p, double alpha);
void add_l1_subgradient(const SymNetParams& p, double alpha, std::span<double> grad);

/// One polynomial term: coefficient times the product of dictionary symbols
/// (indices sorted ascending, empty for the constant).
struct Term {
  double coefficient = 0.0;
  std::vector<int> monomial;
  std::string label;
};

struct Expression {
  std::vector<Term> terms;  // sorted by |coefficient| descending
  std::string text;

  /// Sum of coefficients of the term with this label (0 when absent).
  double coefficient(const std::string& label) const;
};

/// Maximum expansion size before extraction gives up.
inline constexpr std::size_t kMaxExpansionTerms = 1'000'000;

/// Expands the network into one polynomial per output channel.
std::vector<Expression> extract_equation(const SymNetParams& p, const DictionarySpec& spec, double threshold);

/// Evaluates an extracted polynomial at dictionary values (one column).
double evaluate_expression(const Expression& e, std::span<const double> symbols);

}  // namespace snode::symnet
