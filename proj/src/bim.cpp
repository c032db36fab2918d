#include "mutflow/bim.hpp"

#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow {

Var outer_relu_sum(Var a, Var b) {
  const std::size_t nl = a.dim(0), nr = b.dim(0), w = a.dim(1);
  const Var s = ops::add(ops::reshape(a, {nl, 1, w}), ops::reshape(b, {1, nr, w}));
  return ops::reshape(ops::relu(s), {nl * nr, w});
}

BimLayer::BimLayer(ParameterStore& store, const std::string& prefix, std::size_t d, const PairHeadConfig& cfg,
                   Rng& rng)
    : cfg_(cfg), d_(d) {
  if (d % cfg.heads != 0) throw ContractError("bim: d_single must be divisible by heads");
  const nn::Init att = cfg.zero_attention ? nn::Init::zeros : nn::Init::uniform;
  q_ = nn::Linear(store, prefix + ".q", d, d, rng, false, att);
  k_ = nn::Linear(store, prefix + ".k", d, d, rng, false, att);
  v_ = nn::Linear(store, prefix + ".v", d, d, rng, false, att);
  out_ = nn::Linear(store, prefix + ".out", d, d, rng, true, att);
  bias_ = nn::Linear(store, prefix + ".pair_bias", cfg.width, cfg.heads, rng, false);
  ff1_ = nn::Linear(store, prefix + ".ff1", d, 2 * d, rng);
  ff2_ = nn::Linear(store, prefix + ".ff2", 2 * d, d, rng);
  pl_ = nn::Linear(store, prefix + ".pair_l", d, cfg.width, rng);
  pr_ = nn::Linear(store, prefix + ".pair_r", d, cfg.width, rng, false);
  pu_ = nn::Linear(store, prefix + ".pair_update", cfg.width, cfg.width, rng);
  norm1_ = nn::LayerNorm(store, prefix + ".norm1", d);
  norm2_ = nn::LayerNorm(store, prefix + ".norm2", d);
}

void BimLayer::operator()(Graph& g, Var& x, Var& pair, std::size_t n_lig, std::size_t n_rec) const {
  const std::size_t H = cfg_.heads, c = d_ / H;
  const Var q = q_(g, x), k = k_(g, x), v = v_(g, x);
  const Var bias = bias_(g, pair);  // [nL*nR, H]
  const Var zl = g.constant(Tensor({n_lig, n_lig}));
  const Var zr = g.constant(Tensor({n_rec, n_rec}));
  std::vector<Var> heads;
  for (std::size_t hh = 0; hh < H; ++hh) {
    const Var b = ops::reshape(ops::slice(bias, 1, hh, hh + 1), {n_lig, n_rec});
    const Var full = ops::concat({ops::concat({zl, b}, 1), ops::concat({ops::transpose(b), zr}, 1)}, 0);
    const Var qh = ops::slice(q, 1, hh * c, (hh + 1) * c);
    const Var kh = ops::slice(k, 1, hh * c, (hh + 1) * c);
    const Var vh = ops::slice(v, 1, hh * c, (hh + 1) * c);
    const Var logits = ops::add(ops::scale(ops::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(c))), full);
    heads.push_back(ops::matmul(ops::softmax(logits), vh));
  }
  const Var x1 = norm1_(g, ops::add(x, out_(g, ops::concat(heads, 1))));
  x = norm2_(g, ops::add(x1, ff2_(g, ops::relu(ff1_(g, x1)))));

  const Var a = pl_(g, ops::slice(x, 0, 0, n_lig));
  const Var bb = pr_(g, ops::slice(x, 0, n_lig, n_lig + n_rec));
  pair = ops::add(pair, pu_(g, outer_relu_sum(a, bb)));
}

BimHead::BimHead(ParameterStore& store, const std::string& prefix, std::size_t d_single, const PairHeadConfig& cfg,
                 Rng& rng)
    : cfg_(cfg) {
  if (cfg.layers == 0 || cfg.width == 0 || cfg.heads == 0) throw ContractError("bim: layers, width, heads must be positive");
  // Linear(concat(h_i, h_j)) split into its two column blocks.
  proj_l_ = nn::Linear(store, prefix + ".project.l", d_single, cfg.width, rng);
  proj_r_ = nn::Linear(store, prefix + ".project.r", d_single, cfg.width, rng, false);
  proj_out_ = nn::Linear(store, prefix + ".project.out", cfg.width, cfg.width, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(store, prefix + ".layer" + std::to_string(l), d_single, cfg, rng);
  }
  head_ = nn::Linear(store, prefix + ".head", cfg.width, 1, rng);
  const double d0 = cfg.initial_distance;
  head_.bias()->value[0] = d0 > 30.0 ? d0 : std::log(std::expm1(d0));
}

Var BimHead::pair_project(Graph& g, Var h, std::span<const std::size_t> ligand,
                          std::span<const std::size_t> receptor) const {
  if (ligand.empty() || receptor.empty()) throw ContractError("pair_project: empty binder");
  const Var a = proj_l_(g, ops::gather_rows(h, ligand));
  const Var b = proj_r_(g, ops::gather_rows(h, receptor));
  return proj_out_(g, outer_relu_sum(a, b));
}

Var BimHead::predict(Graph& g, Var h, std::span<const std::size_t> ligand,
                     std::span<const std::size_t> receptor) const {
  Var pair = pair_project(g, h, ligand, receptor);
  std::vector<std::size_t> order(ligand.begin(), ligand.end());
  order.insert(order.end(), receptor.begin(), receptor.end());
  Var x = ops::gather_rows(h, order);
  for (const BimLayer& layer : layers_) layer(g, x, pair, ligand.size(), receptor.size());
  return ops::reshape(ops::softplus(head_(g, pair)), {ligand.size(), receptor.size()});
}

Var bim_loss(Var predicted, Var target) {
  if (predicted.shape() != target.shape()) {
    throw ContractError("bim_loss: shape mismatch " + shape_string(predicted.shape()) + " vs " +
                        shape_string(target.shape()));
  }
  return ops::squared_error(predicted, target);
}

}  // namespace mutflow
