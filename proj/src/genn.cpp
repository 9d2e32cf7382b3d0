#include "snode/genn.hpp"

#include <cmath>

#include <fmt/core.h>

#include "snode/error.hpp"

namespace snode::genn {

GeNNParams::GeNNParams(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw InvalidArgument("GeNN needs at least an input and an output width");
  for (int s : sizes_)
    if (s < 1) throw InvalidArgument("GeNN layer widths must be positive");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(n);
    n += static_cast<std::size_t>(sizes_[l + 1]) * static_cast<std::size_t>(sizes_[l] + 1);
  }
  values_.assign(n, 0.0);
}

GeNNParams GeNNParams::initialized(std::vector<int> layer_sizes, std::mt19937_64& rng) {
  GeNNParams p(std::move(layer_sizes));
  for (int l = 0; l + 1 < p.layers(); ++l) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(p.sizes_[static_cast<std::size_t>(l)])));
    auto w = p.weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  return p;
}

Eigen::Map<RowMatrix> GeNNParams::weight(int layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {values_.data() + offsets_.at(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const RowMatrix> GeNNParams::weight(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {values_.data() + offsets_.at(l), sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> GeNNParams::bias(int layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {values_.data() + offsets_.at(l) + static_cast<std::size_t>(sizes_[l + 1] * sizes_[l]), sizes_[l + 1]};
}
Eigen::Map<const Eigen::VectorXd> GeNNParams::bias(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {values_.data() + offsets_.at(l) + static_cast<std::size_t>(sizes_[l + 1] * sizes_[l]), sizes_[l + 1]};
}

std::vector<int> default_layers(int inputs, int outputs, std::vector<int> hidden) {
  std::vector<int> sizes{inputs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(outputs);
  return sizes;
}

namespace {

void check_inputs(const GeNNParams& p, const RowMatrix& inputs) {
  if (p.empty()) throw InvalidArgument("GeNN parameters are empty");
  if (inputs.rows() != p.inputs())
    throw InvalidArgument(fmt::format("GeNN expects {} input channels, got {}", p.inputs(), inputs.rows()));
}

// activations[l] is the input of layer l (post-tanh for l > 0)
std::vector<RowMatrix> activations(const GeNNParams& p, const RowMatrix& inputs) {
  std::vector<RowMatrix> acts{inputs};
  for (int l = 0; l < p.layers(); ++l) {
    RowMatrix z = p.weight(l) * acts.back();
    z.colwise() += p.bias(l);
    if (l + 1 < p.layers()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

RowMatrix genn_forward(const GeNNParams& p, const RowMatrix& inputs) {
  check_inputs(p, inputs);
  return std::move(activations(p, inputs).back());
}

void genn_vjp(const GeNNParams& p, const RowMatrix& inputs, const RowMatrix& upstream, std::span<double> grad_params,
              RowMatrix* grad_inputs) {
  check_inputs(p, inputs);
  if (grad_params.size() != p.size()) throw InvalidArgument("gradient buffer size does not match GeNN parameters");
  if (upstream.rows() != p.outputs() || upstream.cols() != inputs.cols())
    throw InvalidArgument("upstream gradient shape does not match the GeNN output");
  const auto acts = activations(p, inputs);
  RowMatrix g = upstream;
  for (int l = p.layers() - 1; l >= 0; --l) {
    if (l + 1 < p.layers()) {
      const auto& a = acts[static_cast<std::size_t>(l + 1)];
      g = g.cwiseProduct((1.0 - a.array().square()).matrix());
    }
    const auto rows = p.weight(l).rows();
    const auto cols = p.weight(l).cols();
    Eigen::Map<RowMatrix> gw(grad_params.data() + p.offset(l), rows, cols);
    gw.noalias() += g * acts[static_cast<std::size_t>(l)].transpose();
    Eigen::Map<Eigen::VectorXd> gb(grad_params.data() + p.offset(l) + static_cast<std::size_t>(rows * cols), rows);
    gb += g.rowwise().sum();
    if (l > 0 || grad_inputs) g = p.weight(l).transpose() * g;
  }
  if (grad_inputs) *grad_inputs = std::move(g);
}

}  // namespace snode::genn
