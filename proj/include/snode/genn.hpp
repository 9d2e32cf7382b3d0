#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "snode/types.hpp"

namespace snode::genn {

/// Fully connected tanh network applied independently to every grid point
/// (column of the input). Flat storage: per layer W (out x in, row-major) then b.
class GeNNParams {
 public:
  GeNNParams() = default;
  explicit GeNNParams(std::vector<int> layer_sizes);

  /// Hidden layers ~ N(0, 1/fan_in), biases zero, final layer zero.
  static GeNNParams initialized(std::vector<int> layer_sizes, std::mt19937_64& rng);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int inputs() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int outputs() const { return sizes_.empty() ? 0 : sizes_.back(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return sizes_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::size_t offset(int layer) const { return offsets_.at(static_cast<std::size_t>(layer)); }
  Eigen::Map<RowMatrix> weight(int layer);
  Eigen::Map<const RowMatrix> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  friend bool operator==(const GeNNParams& a, const GeNNParams& b) {
    return a.sizes_ == b.sizes_ && a.values_ == b.values_;
  }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> values_;
};

/// Default architecture: inputs -> 64 -> 64 -> outputs.
std::vector<int> default_layers(int inputs, int outputs, std::vector<int> hidden = {64, 64});

RowMatrix genn_forward(const GeNNParams& p, const RowMatrix& inputs);

void genn_vjp(const GeNNParams& p, const RowMatrix& inputs, const RowMatrix& upstream, std::span<double> grad_params,
              RowMatrix* grad_inputs);

}  // namespace snode::genn
