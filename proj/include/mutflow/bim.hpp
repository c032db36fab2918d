#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mutflow/nn.hpp"

namespace mutflow {

struct PairHeadConfig {
  std::size_t layers = 2;
  std::size_t width = 32;
  std::size_t heads = 4;
  // Initial output distance (A) set through the head bias.
  double initial_distance = 10.0;
  // Test hook: query/key/value/output projections start at zero.
  bool zero_attention = false;
};

// Transformer over the ligand-then-receptor sequence whose ligand x receptor
// logits receive a per-head bias projected from the pair array.
class BimLayer {
 public:
  BimLayer() = default;
  BimLayer(ParameterStore& store, const std::string& prefix, std::size_t d, const PairHeadConfig& cfg, Rng& rng);

  // x: [nL+nR, d], pair: [nL*nR, width]. Updates both in place.
  void operator()(Graph& g, Var& x, Var& pair, std::size_t n_lig, std::size_t n_rec) const;

 private:
  PairHeadConfig cfg_;
  std::size_t d_ = 0;
  nn::Linear q_, k_, v_, out_, bias_, ff1_, ff2_, pl_, pr_, pu_;
  nn::LayerNorm norm1_, norm2_;
};

class BimHead {
 public:
  BimHead() = default;
  BimHead(ParameterStore& store, const std::string& prefix, std::size_t d_single, const PairHeadConfig& cfg,
          Rng& rng);

  // MLP over concat(h_i, h_j) for ligand i and receptor j: [nL*nR, width].
  Var pair_project(Graph& g, Var h, std::span<const std::size_t> ligand,
                   std::span<const std::size_t> receptor) const;
  // Predicted CA distances [nL, nR], nonnegative.
  Var predict(Graph& g, Var h, std::span<const std::size_t> ligand, std::span<const std::size_t> receptor) const;

 private:
  PairHeadConfig cfg_;
  nn::Linear proj_l_, proj_r_, proj_out_, head_;
  std::vector<BimLayer> layers_;
};

// Mean squared entrywise difference; ContractError on a shape mismatch.
Var bim_loss(Var predicted, Var target);

// relu(A_i + B_j) over the outer sum of a [nL,w] and b [nR,w]: [nL*nR, w].
Var outer_relu_sum(Var a, Var b);

}  // namespace mutflow
