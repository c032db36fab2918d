#include "mutflow/flow.hpp"

#include <cmath>
#include <map>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

// [m,K] logits -> [m,K+1] knots from 0 to exactly 2pi.
Var knot_nodes(Var logits, std::size_t k) {
  Graph& g = *logits.graph;
  const std::size_t m = logits.dim(0);
  const double span = 1.0 - kMinBin * static_cast<double>(k);
  const Var widths = ops::scale(ops::add_scalar(ops::scale(ops::softmax(logits), span), kMinBin), kTwoPi);
  // cumsum through a strictly upper-triangular ones matrix; column k is replaced by 2pi.
  Tensor tri({k, k});
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = r + 1; c < k; ++c) tri.at(r, c) = 1.0;
  }
  const Var inner = ops::matmul(widths, g.constant(std::move(tri)));
  return ops::concat({inner, g.constant(Tensor({m, 1}, kTwoPi))}, 1);
}

}  // namespace

SplineNodes build_spline_nodes(Var raw, std::size_t k) {
  if (raw.shape().size() != 2 || raw.dim(1) != spline_raw_width(k)) {
    throw ContractError("build_spline_nodes: expected raw width " + std::to_string(spline_raw_width(k)));
  }
  SplineNodes s;
  s.pieces = k;
  s.x = knot_nodes(ops::slice(raw, 1, 0, k), k);
  s.y = knot_nodes(ops::slice(raw, 1, k, 2 * k), k);
  s.d = ops::add_scalar(ops::softplus(ops::add_scalar(ops::slice(raw, 1, 2 * k, 3 * k + 1), kDerivativeShift)),
                        kMinDerivative);
  return s;
}

SplineNodeEval spline_forward_nodes(const SplineNodes& s, Var x) {
  const std::size_t m = x.dim(0), k = s.pieces;
  const Tensor& xv = x.value();
  const Tensor& kx = s.x.value();
  std::vector<std::size_t> lo(m), hi(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double v = xv[r];
    if (!(v >= -1e-9 && v <= kTwoPi + 1e-9)) {
      throw ContractError("spline: angle " + std::to_string(v) + " outside [0, 2pi]");
    }
    lo[r] = find_bin(std::span<const double>(kx.data() + r * (k + 1), k + 1), v);
    hi[r] = lo[r] + 1;
  }
  const Var xk = ops::pick_columns(s.x, lo), xk1 = ops::pick_columns(s.x, hi);
  const Var yk = ops::pick_columns(s.y, lo), yk1 = ops::pick_columns(s.y, hi);
  const Var dk = ops::pick_columns(s.d, lo), dk1 = ops::pick_columns(s.d, hi);

  const Var w = ops::sub(xk1, xk);
  const Var h = ops::sub(yk1, yk);
  const Var sl = ops::div(h, w);
  const Var xi = ops::div(ops::sub(x, xk), w);
  const Var one_m = ops::add_scalar(ops::neg(xi), 1.0);
  const Var t = ops::mul(xi, one_m);
  const Var xi2 = ops::square(xi);
  const Var mix = ops::sub(ops::add(dk1, dk), ops::scale(sl, 2.0));
  const Var den = ops::add(sl, ops::mul(mix, t));
  const Var num = ops::mul(h, ops::add(ops::mul(sl, xi2), ops::mul(dk, t)));

  SplineNodeEval out;
  out.value = ops::add(yk, ops::div(num, den));
  const Var dnum = ops::add(ops::add(ops::mul(dk1, xi2), ops::scale(ops::mul(sl, t), 2.0)),
                            ops::mul(dk, ops::square(one_m)));
  out.log_deriv = ops::sub(ops::add(ops::scale(ops::log(sl), 2.0), ops::log(dnum)), ops::scale(ops::log(den), 2.0));
  return out;
}

CouplingFlow::CouplingFlow(ParameterStore& store, const std::string& prefix, std::size_t d_single,
                           const FlowConfig& cfg, Rng& rng)
    : cfg_(cfg), d_single_(d_single) {
  if (cfg.pieces == 0 || cfg.layers == 0) throw ContractError("flow config: pieces and layers must be positive");
  std::vector<std::size_t> widths{d_single + kNumAminoAcids + kTrigWidth};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(2 * spline_raw_width(cfg.pieces));
  const nn::Init last = cfg.zero_init ? nn::Init::zeros : nn::Init::uniform;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    conditioners_.emplace_back(store, prefix + ".layer" + std::to_string(l), widths, rng, last);
  }
}

Var CouplingFlow::log_density(Graph& g, Var h_rows, std::span<const AminoAcid> types,
                              const std::vector<std::vector<double>>& chis) const {
  const std::size_t m = chis.size();
  if (m == 0 || types.size() != m || h_rows.dim(0) != m) throw ContractError("coupling flow: row count mismatch");
  const std::size_t t = chis.front().size();
  if (t == 0) throw ContractError("coupling flow: residue without torsions");
  if (t > kMaxChi) throw ContractError("coupling flow: more than four torsions");

  Tensor onehot({m, kNumAminoAcids});
  std::vector<Var> z;
  for (std::size_t a = 0; a < t; ++a) {
    Tensor col({m, 1});
    for (std::size_t r = 0; r < m; ++r) {
      if (chis[r].size() != t) throw ContractError("coupling flow: rows with different torsion counts");
      col[r] = chis[r][a];
    }
    z.push_back(g.constant(std::move(col)));
  }
  for (std::size_t r = 0; r < m; ++r) onehot.at(r, index_of(types[r])) = 1.0;
  const Var type_var = g.constant(std::move(onehot));
  const Var zero_col = g.constant(Tensor({m, 1}));

  const std::size_t k = cfg_.pieces, rw = spline_raw_width(k);
  const std::size_t n_layers = t == 1 ? 1 : cfg_.layers;
  Var logdet = g.constant(Tensor({m, 1}, -static_cast<double>(t) * std::log(kTwoPi)));
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<std::size_t> moving;
    std::vector<Var> trig;
    for (std::size_t a = 0; a < kMaxChi; ++a) {
      const bool moves = a < t && (t == 1 || a % 2 == l % 2);
      if (moves) moving.push_back(a);
      if (a < t && !moves) {
        trig.push_back(ops::sin(z[a]));
        trig.push_back(ops::cos(z[a]));
      } else {
        trig.push_back(zero_col);
        trig.push_back(zero_col);
      }
    }
    const Var cond = ops::concat({h_rows, type_var, ops::concat(trig, 1)}, 1);
    const Var raw_all = conditioners_[l](g, cond);
    for (std::size_t j = 0; j < moving.size(); ++j) {
      const SplineNodes s = build_spline_nodes(ops::slice(raw_all, 1, j * rw, (j + 1) * rw), k);
      const SplineNodeEval e = spline_forward_nodes(s, z[moving[j]]);
      z[moving[j]] = e.value;
      logdet = ops::add(logdet, e.log_deriv);
    }
  }
  return logdet;
}

std::size_t count_torsion_residues(std::span<const Residue> residues) {
  std::size_t n = 0;
  for (const Residue& r : residues) {
    const ChiAngles chi = sidechain_torsions(r);
    n += chi.complete && !chi.values.empty();
  }
  return n;
}

Var CouplingFlow::sim_loss(Graph& g, Var h, std::span<const Residue> residues) const {
  if (h.dim(0) != residues.size()) throw ContractError("sim_loss: hidden rows do not match residues");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  std::map<std::size_t, std::vector<std::vector<double>>> group_chis;
  std::size_t total = 0;
  for (std::size_t i = 0; i < residues.size(); ++i) {
    ChiAngles chi = sidechain_torsions(residues[i]);
    if (!chi.complete || chi.values.empty()) continue;
    const std::size_t t = chi.values.size();
    groups[t].push_back(i);
    group_chis[t].push_back(std::move(chi.values));
    ++total;
  }
  if (total == 0) throw ContractError("sim_loss: no residue with complete sidechain torsions");
  std::vector<Var> parts;
  for (const auto& [t, rows] : groups) {
    std::vector<AminoAcid> types;
    for (std::size_t i : rows) types.push_back(residues[i].type);
    parts.push_back(ops::sum(log_density(g, ops::gather_rows(h, rows), types, group_chis[t])));
  }
  Var acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = ops::add(acc, parts[i]);
  return ops::scale(acc, -1.0 / static_cast<double>(total));
}

}  // namespace mutflow
