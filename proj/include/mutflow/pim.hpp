#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "mutflow/graph.hpp"
#include "mutflow/ops.hpp"

namespace mutflow {

// Coordinate-wise max over the selected rows of h, shape [1, d].
Var global_pool(Var h, std::span<const std::size_t> rows);

// Throws NumericError when either norm is at most 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// S_ij = cos(a_i, b_j) for rows of a [N,d] and b [N,d].
Var cosine_matrix(Var a, Var b);

// (1/2) sum_k (L_k^l + L_k^r) with
//   L_k^l = -(1/N) log softmax_j(S_kj / tau)[k],  L_k^r the same over S^T.
// `tau` is a one-element node.
Var contrastive_loss(Var similarity, Var tau);

// Fraction of rows whose largest similarity sits on the diagonal.
double matching_accuracy(const Tensor& similarity);

// Holds the trainable temperature `pim.tau`.
class PimHead {
 public:
  static constexpr double kInitTau = 0.07;
  static constexpr double kMinTau = 1e-3;
  static constexpr double kMaxTau = 1.0;

  PimHead() = default;
  explicit PimHead(ParameterStore& store, const std::string& name = "pim.tau");

  Var tau(Graph& g) const { return g.parameter(*tau_); }
  // Called after every optimizer step.
  void clamp_tau() const;
  double tau_value() const { return tau_->value[0]; }

 private:
  Parameter* tau_ = nullptr;
};

}  // namespace mutflow
