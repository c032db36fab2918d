#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mutflow/dataio.hpp"
#include "mutflow/encoder.hpp"

namespace mutflow {

// Substitutes residue types at the mutation sites. Backbone atoms are kept,
// CB is kept unless the new type is GLY, other sidechain atoms are dropped.
// DataError naming the site when it is absent or the wild type differs.
Complex build_mutant(const Complex& complex, std::span<const Mutation> mutations);

// Index of the residue matching a mutation site, or DataError.
std::size_t find_site(const Complex& complex, const Mutation& m);

// The `keep` residues whose CA lies nearest any mutation site, in original
// order. Binder sets are remapped; one of them may end up empty.
Complex crop_around_sites(const Complex& complex, std::span<const Mutation> mutations, std::size_t keep = 128);

struct DdgConfig {
  EncoderConfig encoder;
  bool use_pimbim = true;   // PIM and/or BIM pre-trained stream
  bool use_sim = true;      // SIM pre-trained stream
  bool antisymmetric = true;
  std::vector<std::size_t> head_hidden = {128};
  std::size_t crop = 128;
};

// Per-residue outputs of the pre-trained streams for one complex; zeros for a
// disabled stream.
struct StreamValues {
  Tensor pimbim;
  Tensor sim;
};

// Fine-tune encoder fused with up to two frozen pre-trained encoders:
//   e = embedded singles, fused = Linear([e, h_pimbim, h_sim]) (absent streams
//   are zeros), H = maxpool(IPA(fused)),
//   ddg = g(Hw, Hm) - g(Hm, Hw) with g = MLP([Ha, Hb, Ha - Hb]).
class DdgModel {
 public:
  // The pre-trained encoders may be null when their stream is disabled; they
  // must outlive the model.
  DdgModel(ParameterStore& store, const DdgConfig& cfg, Rng& rng, const Encoder* pimbim = nullptr,
           const Encoder* sim = nullptr);

  const DdgConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }

  // Per-residue fused singles [n, d].
  Var fuse(Graph& g, const RawFeatures& raw, const FeatureSet& features) const;
  // Fuses explicit stream values; zero tensors stand for disabled streams.
  Var fuse(Graph& g, Var single, Var h_pimbim, Var h_sim) const;
  // Evaluates both streams outside any training graph. Only valid as a cache
  // while the pre-trained encoders stay frozen.
  StreamValues streams(const Complex& complex) const;

  // [1, d]. `cached` replaces the in-graph stream evaluation.
  Var global(Graph& g, const Complex& complex, const StreamValues* cached = nullptr) const;
  // [1, 1]
  Var predict(Graph& g, const Complex& wild, const Complex& mutant, const StreamValues* wild_streams = nullptr,
              const StreamValues* mutant_streams = nullptr) const;
  // Crops around the sites, builds the mutant and predicts.
  Var predict_record(Graph& g, const Complex& wild, std::span<const Mutation> mutations) const;

 private:
  DdgConfig cfg_;
  Encoder encoder_;
  nn::Linear fusion_;
  nn::Mlp head_;
  const Encoder* pimbim_ = nullptr;
  const Encoder* sim_ = nullptr;
};

// Mean squared error over the batch; ContractError when empty or mismatched.
Var ddg_loss(Var predictions, Var labels);

}  // namespace mutflow
