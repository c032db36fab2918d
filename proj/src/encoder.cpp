#include "mutflow/encoder.hpp"

#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow {

void EncoderConfig::validate() const {
  if (d_single == 0 || d_pair == 0 || heads == 0 || points == 0) {
    throw ContractError("encoder config: widths, heads and points must be positive");
  }
  if (d_single % heads != 0) throw ContractError("encoder config: d_single must be divisible by heads");
}

IpaBlock::IpaBlock(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const nn::Init init = cfg.zero_init ? nn::Init::zeros : nn::Init::uniform;
  const std::size_t d = cfg.d_single, hp3 = cfg.heads * cfg.points * 3;
  q_ = nn::Linear(store, prefix + ".q", d, d, rng, false, init);
  k_ = nn::Linear(store, prefix + ".k", d, d, rng, false, init);
  v_ = nn::Linear(store, prefix + ".v", d, d, rng, false, init);
  qp_ = nn::Linear(store, prefix + ".qp", d, hp3, rng, false, init);
  kp_ = nn::Linear(store, prefix + ".kp", d, hp3, rng, false, init);
  bias_ = nn::Linear(store, prefix + ".pair_bias", cfg.d_pair, cfg.heads, rng, false, init);
  out_ = nn::Linear(store, prefix + ".out", d + cfg.heads * cfg.d_pair, d, rng, true, init);
  ff1_ = nn::Linear(store, prefix + ".ff1", d, 2 * d, rng, true, init);
  ff2_ = nn::Linear(store, prefix + ".ff2", 2 * d, d, rng, true, init);
  // softplus(0.5413) = 1
  head_weight_ = &store.create(prefix + ".head_weight", Tensor({cfg.heads}, 0.541324854612918));
  norm1_ = nn::LayerNorm(store, prefix + ".norm1", d);
  norm2_ = nn::LayerNorm(store, prefix + ".norm2", d);
}

Var IpaBlock::operator()(Graph& g, Var h, Var pair, const Tensor& rotations, const Tensor& translations) const {
  const std::size_t n = h.dim(0);
  const std::size_t H = cfg_.heads, c = cfg_.d_single / H, P = cfg_.points, dp = cfg_.d_pair;
  const double wl = std::sqrt(1.0 / 3.0);
  const double wc = std::sqrt(2.0 / (9.0 * static_cast<double>(P)));

  const Var q = q_(g, h), k = k_(g, h), v = v_(g, h);
  const Var qp = ops::apply_frames(qp_(g, h), rotations, translations);
  const Var kp = ops::apply_frames(kp_(g, h), rotations, translations);
  const Var bias = bias_(g, pair);  // [n*n, H]
  const Var gamma = ops::softplus(g.parameter(*head_weight_));
  const Var pair3 = ops::reshape(pair, {n, n, dp});

  std::vector<Var> heads;
  std::vector<Var> pair_heads;
  for (std::size_t hh = 0; hh < H; ++hh) {
    const Var qh = ops::slice(q, 1, hh * c, (hh + 1) * c);
    const Var kh = ops::slice(k, 1, hh * c, (hh + 1) * c);
    const Var vh = ops::slice(v, 1, hh * c, (hh + 1) * c);
    const Var qph = ops::slice(qp, 1, hh * P * 3, (hh + 1) * P * 3);
    const Var kph = ops::slice(kp, 1, hh * P * 3, (hh + 1) * P * 3);

    Var logits = ops::scale(ops::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(c)));
    logits = ops::add(logits, ops::reshape(ops::slice(bias, 1, hh, hh + 1), {n, n}));
    // |a - b|^2 = |a|^2 + |b|^2 - 2 a.b
    const Var qq = ops::sum_axis(ops::square(qph), 1, true);                   // [n,1]
    const Var kk = ops::transpose(ops::sum_axis(ops::square(kph), 1, true));  // [1,n]
    const Var d2 = ops::sub(ops::add(qq, kk), ops::scale(ops::matmul_nt(qph, kph), 2.0));
    const Var gh = ops::scale(ops::slice(gamma, 0, hh, hh + 1), wc / 2.0);
    logits = ops::scale(ops::sub(logits, ops::mul(d2, gh)), wl);

    const Var a = ops::softmax(logits);
    heads.push_back(ops::matmul(a, vh));
    pair_heads.push_back(ops::sum_axis(ops::mul(ops::reshape(a, {n, n, 1}), pair3), 1));
  }
  heads.insert(heads.end(), pair_heads.begin(), pair_heads.end());
  const Var attended = out_(g, ops::concat(heads, 1));
  const Var h1 = norm1_(g, ops::add(h, attended));
  const Var ff = ff2_(g, ops::relu(ff1_(g, h1)));
  return norm2_(g, ops::add(h1, ff));
}

Encoder::Encoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg), prefix_(prefix), featurizer_(store, prefix + ".embed", cfg.d_single, cfg.d_pair, rng) {
  cfg.validate();
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    blocks_.emplace_back(store, prefix + ".block" + std::to_string(b), cfg, rng);
  }
}

Var Encoder::run_blocks(Graph& g, Var single, Var pair, const RawFeatures& raw) const {
  Var h = single;
  for (const IpaBlock& b : blocks_) h = b(g, h, pair, raw.rotations, raw.translations);
  return h;
}

Var Encoder::encode(Graph& g, const RawFeatures& raw) const {
  const FeatureSet fs = featurizer_(g, raw);
  return run_blocks(g, fs.single, fs.pair, raw);
}

}  // namespace mutflow
