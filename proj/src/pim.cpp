#include "mutflow/pim.hpp"

#include <algorithm>
#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow {

Var global_pool(Var h, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("global_pool: empty residue set");
  return ops::max_axis(ops::gather_rows(h, rows), 0, true);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= 1e-12 || nb <= 1e-12) throw NumericError("cosine_similarity: near-zero norm");
  return ab / (na * nb);
}

namespace {

Var normalize_rows(Var x) {
  const Tensor& v = x.value();
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v.at(r, c) * v.at(r, c);
    if (std::sqrt(s) <= 1e-12) {
      throw NumericError("cosine similarity: row " + std::to_string(r) + " has near-zero norm");
    }
  }
  return ops::div(x, ops::sqrt(ops::sum_axis(ops::square(x), 1, true)));
}

}  // namespace

Var cosine_matrix(Var a, Var b) {
  if (a.shape().size() != 2 || a.shape() != b.shape()) {
    throw ContractError("cosine_matrix: operands must be equal-shape matrices");
  }
  return ops::matmul_nt(normalize_rows(a), normalize_rows(b));
}

Var contrastive_loss(Var similarity, Var tau) {
  const Shape& s = similarity.shape();
  if (s.size() != 2 || s[0] != s[1] || s[0] == 0) throw ContractError("contrastive_loss: need a square batch");
  const std::size_t n = s[0];
  std::vector<std::size_t> diag(n);
  for (std::size_t k = 0; k < n; ++k) diag[k] = k;
  const Var logits = ops::div(similarity, tau);
  const Var rows = ops::pick_columns(ops::log_softmax(logits), diag);
  const Var cols = ops::pick_columns(ops::log_softmax(ops::transpose(logits)), diag);
  return ops::scale(ops::add(ops::sum(rows), ops::sum(cols)), -1.0 / (2.0 * static_cast<double>(n)));
}

double matching_accuracy(const Tensor& similarity) {
  const std::size_t n = similarity.dim(0);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (similarity.at(r, c) > similarity.at(r, best)) best = c;
    }
    hits += best == r;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

PimHead::PimHead(ParameterStore& store, const std::string& name)
    : tau_(&store.create(name, Tensor({1}, kInitTau))) {}

void PimHead::clamp_tau() const { tau_->value[0] = std::clamp(tau_->value[0], kMinTau, kMaxTau); }

}  // namespace mutflow
