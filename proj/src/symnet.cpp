#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/core.h>

#include "snode/error.hpp"
#include "snode/symnet.hpp"

namespace snode::symnet {

SymNetParams::SymNetParams(int hidden_layers, int inputs, int outputs)
    : hidden_(hidden_layers), inputs_(inputs), outputs_(outputs) {
  if (hidden_layers < 1) throw InvalidArgument("SymNet needs at least one hidden layer");
  if (inputs < 1 || outputs < 1) throw InvalidArgument("SymNet needs positive input and output widths");
  std::size_t n = 0;
  for (int k = 1; k <= hidden_layers; ++k) n += 2 * static_cast<std::size_t>(inputs + k - 1) + 2;
  n += static_cast<std::size_t>(outputs) * static_cast<std::size_t>(inputs + hidden_layers + 1);
  values_.assign(n, 0.0);
}

SymNetParams SymNetParams::random(int hidden_layers, int inputs, int outputs, std::mt19937_64& rng, double stddev) {
  SymNetParams p(hidden_layers, inputs, outputs);
  std::normal_distribution<double> dist(0.0, stddev);
  for (int k = 1; k <= hidden_layers; ++k) {
    auto w = p.weight(k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  auto w = p.output_weight();
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return p;
}

std::size_t SymNetParams::weight_offset(int k) const {
  if (k < 1 || k > hidden_) throw InvalidArgument(fmt::format("layer {} out of range 1..{}", k, hidden_));
  std::size_t off = 0;
  for (int j = 1; j < k; ++j) off += 2 * static_cast<std::size_t>(inputs_ + j - 1) + 2;
  return off;
}

std::size_t SymNetParams::output_offset() const {
  std::size_t off = 0;
  for (int j = 1; j <= hidden_; ++j) off += 2 * static_cast<std::size_t>(inputs_ + j - 1) + 2;
  return off;
}

Eigen::Map<RowMatrix> SymNetParams::weight(int k) {
  return {values_.data() + weight_offset(k), 2, inputs_ + k - 1};
}
Eigen::Map<const RowMatrix> SymNetParams::weight(int k) const {
  return {values_.data() + weight_offset(k), 2, inputs_ + k - 1};
}
Eigen::Map<Eigen::VectorXd> SymNetParams::bias(int k) {
  return {values_.data() + weight_offset(k) + 2 * static_cast<std::size_t>(inputs_ + k - 1), 2};
}
Eigen::Map<const Eigen::VectorXd> SymNetParams::bias(int k) const {
  return {values_.data() + weight_offset(k) + 2 * static_cast<std::size_t>(inputs_ + k - 1), 2};
}
Eigen::Map<RowMatrix> SymNetParams::output_weight() {
  return {values_.data() + output_offset(), outputs_, inputs_ + hidden_};
}
Eigen::Map<const RowMatrix> SymNetParams::output_weight() const {
  return {values_.data() + output_offset(), outputs_, inputs_ + hidden_};
}
Eigen::Map<Eigen::VectorXd> SymNetParams::output_bias() { return {values_.data() + output_bias_offset(), outputs_}; }
Eigen::Map<const Eigen::VectorXd> SymNetParams::output_bias() const {
  return {values_.data() + output_bias_offset(), outputs_};
}

namespace {

void check_dict(const SymNetParams& p, const RowMatrix& dict) {
  if (p.size() == 0) throw InvalidArgument("SymNet parameters are empty");
  if (dict.rows() != p.inputs())
    throw InvalidArgument(fmt::format("dictionary has {} symbols, SymNet expects {}", dict.rows(), p.inputs()));
}

void check_overflow(const RowMatrix& m, int layer) {
  const double peak = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
  if (!(peak < kOverflowLimit))
    throw OverflowError(fmt::format("SymNet layer {} produced a value of magnitude {:.3g}", layer, peak), layer);
}

// Z holds [p_K, ..., p_1, L_1] so layer k reads its bottom n + k - 1 rows.
struct ForwardPass {
  RowMatrix z;
  std::vector<RowMatrix> affine;  // [psi; phi] per layer
};

ForwardPass forward_pass(const SymNetParams& p, const RowMatrix& dict) {
  check_dict(p, dict);
  const int K = p.hidden_layers();
  const Eigen::Index n = p.inputs();
  ForwardPass f;
  f.z.resize(n + K, dict.cols());
  f.z.bottomRows(n) = dict;
  f.affine.resize(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    auto& a = f.affine[static_cast<std::size_t>(k - 1)];
    a.noalias() = p.weight(k) * f.z.bottomRows(n + k - 1);
    a.colwise() += p.bias(k);
    f.z.row(K - k) = a.row(0).cwiseProduct(a.row(1));
    check_overflow(f.z.row(K - k), k);
  }
  return f;
}

}  // namespace

RowMatrix symnet_forward(const SymNetParams& p, const RowMatrix& dict) {
  const auto f = forward_pass(p, dict);
  RowMatrix out = p.output_weight() * f.z;
  out.colwise() += p.output_bias();
  check_overflow(out, p.hidden_layers() + 1);
  return out;
}

void symnet_vjp(const SymNetParams& p, const RowMatrix& dict, const RowMatrix& upstream,
                std::span<double> grad_params, RowMatrix* grad_dict) {
  if (grad_params.size() != p.size()) throw InvalidArgument("gradient buffer size does not match SymNet parameters");
  if (upstream.rows() != p.outputs() || upstream.cols() != dict.cols())
    throw InvalidArgument("upstream gradient shape does not match the SymNet output");
  const auto f = forward_pass(p, dict);
  const int K = p.hidden_layers();
  const Eigen::Index n = p.inputs();

  Eigen::Map<RowMatrix> g_wout(grad_params.data() + p.output_offset(), p.outputs(), n + K);
  g_wout.noalias() += upstream * f.z.transpose();
  Eigen::Map<Eigen::VectorXd> g_bout(grad_params.data() + p.output_bias_offset(), p.outputs());
  g_bout += upstream.rowwise().sum();

  RowMatrix gz = p.output_weight().transpose() * upstream;
  RowMatrix ga(2, dict.cols());
  for (int k = K; k >= 1; --k) {
    const auto& a = f.affine[static_cast<std::size_t>(k - 1)];
    const auto gp = gz.row(K - k);
    ga.row(0) = gp.cwiseProduct(a.row(1));
    ga.row(1) = gp.cwiseProduct(a.row(0));
    const auto len = n + k - 1;
    const std::size_t off = p.weight_offset(k);
    Eigen::Map<RowMatrix> g_w(grad_params.data() + off, 2, len);
    g_w.noalias() += ga * f.z.bottomRows(len).transpose();
    Eigen::Map<Eigen::VectorXd> g_b(grad_params.data() + off + 2 * static_cast<std::size_t>(len), 2);
    g_b += ga.rowwise().sum();
    gz.bottomRows(len).noalias() += p.weight(k).transpose() * ga;
  }
  if (grad_dict) *grad_dict = gz.bottomRows(n);
}

double l1_penalty(const SymNetParams& p, double alpha) {
  const auto v = p.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.output_bias_offset(); ++i) sum += std::abs(v[i]);
  return alpha * sum;
}

void add_l1_subgradient(const SymNetParams& p, double alpha, std::span<double> grad) {
  const auto v = p.values();
  for (std::size_t i = 0; i < p.output_bias_offset(); ++i) {
    if (v[i] > 0) grad[i] += alpha;
    else if (v[i] < 0) grad[i] -= alpha;
  }
}

double Expression::coefficient(const std::string& label) const {
  double c = 0.0;
  for (const auto& t : terms)
    if (t.label == label) c += t.coefficient;
  return c;
}

namespace {

using Poly = std::map<std::vector<int>, double>;

Poly affine(const Eigen::Ref<const Eigen::RowVectorXd>& w, double b, const std::vector<Poly>& symbols) {
  Poly out;
  if (b != 0.0) out[{}] = b;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (w[j] == 0.0) continue;
    for (const auto& [m, c] : symbols[static_cast<std::size_t>(j)]) out[m] += w[j] * c;
  }
  return out;
}

Poly multiply(const Poly& a, const Poly& b) {
  if (a.size() * b.size() > kMaxExpansionTerms * 4)
    throw Error("equation expansion exceeds the term limit; raise the extraction threshold");
  Poly out;
  for (const auto& [ma, ca] : a)
    for (const auto& [mb, cb] : b) {
      std::vector<int> m;
      m.reserve(ma.size() + mb.size());
      std::merge(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(m));
      out[std::move(m)] += ca * cb;
    }
  if (out.size() > kMaxExpansionTerms)
    throw Error(fmt::format("equation expansion has {} terms (limit {}); raise the extraction threshold",
                            out.size(), kMaxExpansionTerms));
  return out;
}

std::string format_text(const std::vector<Term>& terms) {
  if (terms.empty()) return "0";
  std::string s;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    const double c = t.coefficient;
    if (i == 0) s += fmt::format("{:.4g}", c);
    else s += fmt::format(" {} {:.4g}", c < 0 ? '-' : '+', std::abs(c));
    if (!t.monomial.empty()) s += " " + t.label;
  }
  return s;
}

}  // namespace

std::vector<Expression> extract_equation(const SymNetParams& p, const DictionarySpec& spec, double threshold) {
  if (!(threshold >= 0)) throw InvalidArgument("extraction threshold must be non-negative");
  const auto labels = spec.labels();
  if (static_cast<int>(labels.size()) != p.inputs())
    throw InvalidArgument(fmt::format("dictionary has {} symbols, SymNet expects {}", labels.size(), p.inputs()));
  const int K = p.hidden_layers();
  const int n = p.inputs();

  // symbols in Z order: [p_K, ..., p_1, L_1]
  std::vector<Poly> z(static_cast<std::size_t>(n + K));
  for (int j = 0; j < n; ++j) z[static_cast<std::size_t>(K + j)][{j}] = 1.0;
  for (int k = 1; k <= K; ++k) {
    const std::vector<Poly> inputs(z.begin() + (K - k + 1), z.end());
    const auto w = p.weight(k);
    const auto b = p.bias(k);
    const Poly psi = affine(w.row(0), b[0], inputs);
    const Poly phi = affine(w.row(1), b[1], inputs);
    z[static_cast<std::size_t>(K - k)] = multiply(psi, phi);
  }

  std::vector<Expression> out;
  const auto wout = p.output_weight();
  const auto bout = p.output_bias();
  for (int c = 0; c < p.outputs(); ++c) {
    const Poly poly = affine(wout.row(c), bout[c], z);
    Expression e;
    for (const auto& [m, coef] : poly) {
      if (coef == 0.0 || std::abs(coef) < threshold) continue;
      Term t{coef, m, {}};
      if (m.empty()) {
        t.label = "1";
      } else {
        for (std::size_t i = 0; i < m.size(); ++i) {
          if (i) t.label += "·";
          t.label += labels[static_cast<std::size_t>(m[i])];
        }
      }
      e.terms.push_back(std::move(t));
    }
    std::stable_sort(e.terms.begin(), e.terms.end(),
                     [](const Term& a, const Term& b) { return std::abs(a.coefficient) > std::abs(b.coefficient); });
    e.text = format_text(e.terms);
    out.push_back(std::move(e));
  }
  return out;
}

double evaluate_expression(const Expression& e, std::span<const double> symbols) {
  double sum = 0.0;
  for (const auto& t : e.terms) {
    double v = t.coefficient;
    for (int i : t.monomial) v *= symbols[static_cast<std::size_t>(i)];
    sum += v;
  }
  return sum;
}

}  // namespace snode::symnet
