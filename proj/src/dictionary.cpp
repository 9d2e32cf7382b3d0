#include <fmt/core.h>

#include "snode/error.hpp"
#include "snode/symnet.hpp"

namespace snode::symnet {

namespace {

// Multi-indices of total order `order` in `dim` axes, in lexicographic order
// of their axis strings ("xx" < "xy" < "yy"), i.e. descending in the x count.
void multi_indices(int dim, int order, std::vector<int>& current, std::vector<std::vector<int>>& out) {
  const int axis = static_cast<int>(current.size());
  if (axis == dim - 1) {
    current.push_back(order);
    out.push_back(current);
    current.pop_back();
    return;
  }
  for (int a = order; a >= 0; --a) {
    current.push_back(a);
    multi_indices(dim, order - a, current, out);
    current.pop_back();
  }
}

std::vector<std::vector<int>> multi_indices(int dim, int order) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  multi_indices(dim, order, cur, out);
  return out;
}

std::string channel_name(const char* base, int channel, int count) {
  return count == 1 ? std::string(base) : fmt::format("{}{}", base, channel + 1);
}

}  // namespace

std::size_t dictionary_size(int d, int d_s, int d_u, int q) {
  if (d < 0 || d > 3) throw InvalidArgument("dictionary dimension must be in 0..3");
  if (q < 0 || q > 4) throw InvalidArgument("derivative order must be in 0..4");
  if (d_s < 1 || d_u < 0) throw InvalidArgument("need d_s >= 1 and d_u >= 0");
  const auto ds = static_cast<std::size_t>(d_s);
  const auto du = static_cast<std::size_t>(d_u);
  if (d == 0) return ds + du;
  if (d == 1) return ds * static_cast<std::size_t>(q + 1) + du;
  std::size_t total = 0;
  for (int i = 0; i <= q; ++i) total += dictionary_size(d - 1, d_s, d_u, i) - du;
  return total + du;
}

void DictionarySpec::validate() const {
  if (dim < 0 || dim > 2) throw InvalidArgument("dictionary dimension must be 0, 1 or 2");
  if (state_channels < 1 || param_channels < 0) throw InvalidArgument("invalid dictionary channel counts");
  if (max_order < 0 || max_order > 4) throw InvalidArgument("derivative order must be in 0..4");
  if (dim == 0 && max_order != 0) throw InvalidArgument("a 0-d dictionary has no derivatives");
  if (stream_terms && (dim != 2 || state_channels != 1))
    throw InvalidArgument("stream-function entries need a 2-d scalar state");
}

std::vector<DictionarySpec::Entry> DictionarySpec::entries() const {
  validate();
  std::vector<Entry> out;
  for (int c = 0; c < param_channels; ++c) out.push_back({Entry::Kind::param, c, {}, 0});
  for (int o = 0; o <= max_order; ++o) {
    const auto idx = dim == 0 ? std::vector<std::vector<int>>{{}} : multi_indices(dim, o);
    for (const auto& mi : idx)
      for (int c = 0; c < state_channels; ++c) out.push_back({Entry::Kind::derivative, c, mi, 0});
  }
  if (stream_terms) {
    out.push_back({Entry::Kind::stream, 0, {}, 0});
    out.push_back({Entry::Kind::stream, 0, {}, 1});
  }
  return out;
}

std::size_t DictionarySpec::size() const {
  return dictionary_size(dim, state_channels, param_channels, max_order) + (stream_terms ? 2 : 0);
}

std::vector<std::string> DictionarySpec::labels() const {
  static const char axes[] = {'x', 'y', 'z'};
  std::vector<std::string> out;
  for (const auto& e : entries()) {
    switch (e.kind) {
      case Entry::Kind::param:
        out.push_back(channel_name("u", e.channel, param_channels));
        break;
      case Entry::Kind::derivative: {
        std::string label = channel_name("s", e.channel, state_channels);
        std::string suffix;
        for (std::size_t a = 0; a < e.orders.size(); ++a) suffix.append(static_cast<std::size_t>(e.orders[a]), axes[a]);
        if (!suffix.empty()) label += "_" + suffix;
        out.push_back(label);
        break;
      }
      case Entry::Kind::stream:
        out.push_back(e.stream_axis == 0 ? "gamma_x" : "gamma_y");
        break;
    }
  }
  return out;
}

DictionaryBuilder::DictionaryBuilder(const DictionarySpec& spec, const Grid& grid)
    : spec_(spec), grid_(grid), entries_(spec.entries()) {
  grid.validate();
  if (grid.dim != spec.dim)
    throw InvalidArgument(fmt::format("dictionary is {}-d but the grid is {}-d", spec.dim, grid.dim));
  mult_.resize(entries_.size());
  if (grid.dim == 0) return;
  tr_ = spectral::transform_for(grid);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.kind == DictionarySpec::Entry::Kind::derivative) {
      bool any = false;
      for (int o : e.orders) any = any || o > 0;
      if (any) mult_[i] = tr_->derivative_multiplier(e.orders);
    } else if (e.kind == DictionarySpec::Entry::Kind::stream) {
      const std::vector<int> o = e.stream_axis == 0 ? std::vector<int>{1, 0} : std::vector<int>{0, 1};
      auto m = tr_->derivative_multiplier(o);
      const auto inv = tr_->inverse_laplacian_multiplier();
      for (std::size_t p = 0; p < m.size(); ++p) m[p] *= inv[p];
      mult_[i] = std::move(m);
    }
  }
}

void DictionaryBuilder::build(const Field& s, const Field& u, RowMatrix& out) const {
  const auto points = static_cast<Eigen::Index>(grid_.size());
  if (s.rows() != spec_.state_channels || s.cols() != points)
    throw InvalidArgument(fmt::format("state shape {}x{} does not match the dictionary ({}x{})", s.rows(), s.cols(),
                                      spec_.state_channels, points));
  if (u.rows() != spec_.param_channels || u.cols() != points)
    throw InvalidArgument("forcing shape does not match the dictionary");
  out.resize(static_cast<Eigen::Index>(entries_.size()), points);

  std::vector<std::vector<spectral::Complex>> spectra;
  if (tr_) {
    for (Eigen::Index c = 0; c < s.rows(); ++c)
      spectra.push_back(tr_->forward({s.row(c).data(), static_cast<std::size_t>(points)}));
  }
  std::vector<spectral::Complex> work;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (e.kind == DictionarySpec::Entry::Kind::param) {
      out.row(row) = u.row(e.channel);
    } else if (mult_[i].empty()) {
      out.row(row) = s.row(e.channel);
    } else {
      const auto& sp = spectra[static_cast<std::size_t>(e.channel)];
      work.resize(sp.size());
      for (std::size_t p = 0; p < sp.size(); ++p) work[p] = sp[p] * mult_[i][p];
      tr_->inverse(work, {out.row(row).data(), static_cast<std::size_t>(points)});
    }
  }
}

void DictionaryBuilder::state_adjoint(const RowMatrix& grad_dict, Field& grad_state) const {
  const auto points = static_cast<Eigen::Index>(grid_.size());
  grad_state.setZero(spec_.state_channels, points);
  std::vector<std::vector<spectral::Complex>> acc;
  if (tr_) acc.assign(static_cast<std::size_t>(spec_.state_channels),
                      std::vector<spectral::Complex>(static_cast<std::size_t>(points)));
  std::vector<bool> touched(static_cast<std::size_t>(spec_.state_channels), false);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.kind == DictionarySpec::Entry::Kind::param) continue;
    const auto row = static_cast<Eigen::Index>(i);
    if (mult_[i].empty()) {
      grad_state.row(e.channel) += grad_dict.row(row);
      continue;
    }
    const auto g = tr_->forward({grad_dict.row(row).data(), static_cast<std::size_t>(points)});
    auto& a = acc[static_cast<std::size_t>(e.channel)];
    for (std::size_t p = 0; p < g.size(); ++p) a[p] += std::conj(mult_[i][p]) * g[p];
    touched[static_cast<std::size_t>(e.channel)] = true;
  }
  if (!tr_) return;
  std::vector<double> back(static_cast<std::size_t>(points));
  for (int c = 0; c < spec_.state_channels; ++c) {
    if (!touched[static_cast<std::size_t>(c)]) continue;
    tr_->inverse(acc[static_cast<std::size_t>(c)], back);
    for (Eigen::Index p = 0; p < points; ++p) grad_state(c, p) += back[static_cast<std::size_t>(p)];
  }
}

RowMatrix build_dictionary(const Field& s, const Field& u, const Grid& grid, const DictionarySpec& spec) {
  if (grid.dim > 0 && !s.allFinite()) throw InvalidArgument("state contains non-finite values");
  DictionaryBuilder b(spec, grid);
  RowMatrix out;
  b.build(s, u, out);
  return out;
}

}  // namespace snode::symnet
