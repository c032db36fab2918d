#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mutflow/nn.hpp"
#include "mutflow/residue.hpp"
#include "mutflow/spline.hpp"

namespace mutflow {

// Spline parameters as graph nodes, one spline per row: each [m, K+1].
struct SplineNodes {
  Var x, y, d;
  std::size_t pieces = 0;
};

// Same construction as build_spline, row-wise over raw [m, 3K+1].
SplineNodes build_spline_nodes(Var raw, std::size_t k);

struct SplineNodeEval {
  Var value;      // [m,1]
  Var log_deriv;  // [m,1]
};

// Piece selection uses the current values and carries no gradient.
SplineNodeEval spline_forward_nodes(const SplineNodes& s, Var x);

struct FlowConfig {
  std::size_t pieces = 8;
  std::size_t layers = 4;
  std::vector<std::size_t> hidden = {128};
  // The final conditioner layer starts at zero, giving the identity flow.
  bool zero_init = true;
};

// Coupling flow over up to four torsions. Layer l transforms the angles whose
// index has parity l % 2, conditioned on h_i, the type one-hot and sin/cos
// of the other angles. Residues with a single torsion use layer 0 only.
class CouplingFlow {
 public:
  static constexpr std::size_t kTrigWidth = 2 * kMaxChi;

  CouplingFlow() = default;
  CouplingFlow(ParameterStore& store, const std::string& prefix, std::size_t d_single, const FlowConfig& cfg,
               Rng& rng);

  const FlowConfig& config() const { return cfg_; }
  // Raw spline parameters of coupling layer `layer` for conditioner input rows.
  Var conditioner(Graph& g, std::size_t layer, Var input) const { return conditioners_.at(layer)(g, input); }

  // log p(chi | h) per row, [m,1]. Every chi row must hold the same number
  // t of angles, 1 <= t <= 4, each in [0, 2pi].
  Var log_density(Graph& g, Var h_rows, std::span<const AminoAcid> types,
                  const std::vector<std::vector<double>>& chis) const;

  // -(1/n) sum_i log p(chi_i | h_i) over residues with complete torsions.
  // ContractError when no residue qualifies.
  Var sim_loss(Graph& g, Var h, std::span<const Residue> residues) const;

 private:
  FlowConfig cfg_;
  std::size_t d_single_ = 0;
  std::vector<nn::Mlp> conditioners_;
};

// Number of residues that contribute to sim_loss.
std::size_t count_torsion_residues(std::span<const Residue> residues);

}  // namespace mutflow
