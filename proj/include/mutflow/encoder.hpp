#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mutflow/featurize.hpp"
#include "mutflow/nn.hpp"

namespace mutflow {

struct EncoderConfig {
  std::size_t blocks = 6;
  std::size_t d_single = 128;
  std::size_t d_pair = 64;
  std::size_t heads = 4;
  std::size_t points = 4;
  // Test hook: every block weight starts at zero.
  bool zero_init = false;

  // Throws ContractError on a zero field or d_single not divisible by heads.
  void validate() const;
};

// Invariant point attention without value points. Per head h:
//   logit_ij = wL * (q_i.k_j / sqrt(c) + b_ij - gamma_h * wC / 2 * sum_p |T_i qp_i - T_j kp_j|^2)
// with wL = sqrt(1/3), wC = sqrt(2 / (9 P)) and gamma_h = softplus(head weight).
// The head outputs are the attended values and the attended pair rows; then
//   h1 = LN(h + Linear(out)),  h' = LN(h1 + FFN(h1)).
class IpaBlock {
 public:
  IpaBlock() = default;
  IpaBlock(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

  Var operator()(Graph& g, Var h, Var pair, const Tensor& rotations, const Tensor& translations) const;

 private:
  EncoderConfig cfg_;
  nn::Linear q_, k_, v_, qp_, kp_, bias_, out_, ff1_, ff2_;
  Parameter* head_weight_ = nullptr;
  nn::LayerNorm norm1_, norm2_;
};

// Featurizer followed by a stack of IpaBlocks. Frames stay fixed across the
// stack.
class Encoder {
 public:
  Encoder() = default;
  // Parameters are created under `prefix`, e.g. "encoder.sim".
  Encoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  FeatureSet embed(Graph& g, const RawFeatures& raw) const { return featurizer_(g, raw); }
  // Runs the blocks from an explicit single representation.
  Var run_blocks(Graph& g, Var single, Var pair, const RawFeatures& raw) const;
  // [n, d_single]
  Var encode(Graph& g, const RawFeatures& raw) const;

 private:
  EncoderConfig cfg_;
  std::string prefix_;
  Featurizer featurizer_;
  std::vector<IpaBlock> blocks_;
};

}  // namespace mutflow
