#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mutflow/graph.hpp"

namespace mutflow {

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // First and second moment accumulators keyed by parameter name.
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// One bias-corrected Adam update of every listed parameter from its grad.
// The step counter advances once per call.
void adam_step(AdamState& state, std::span<Parameter* const> params);

// Same update with gradients supplied separately (grads[i] pairs params[i]).
void adam_step(AdamState& state, std::span<Parameter* const> params, std::span<const Tensor> grads);

struct PlateauConfig {
  double factor = 0.8;
  std::size_t patience = 5;
  double min_lr = 1e-6;
};

// Decays lr by `factor` when the best of the last `patience` validation losses
// is no better than the best seen before them. Histories of length <=
// patience leave lr unchanged. The result never drops below min_lr.
double plateau_decay(double lr, std::span<const double> history, const PlateauConfig& cfg = {});

// Applies plateau_decay over the losses recorded since the last decay, so one
// plateau triggers one decay.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauConfig cfg = {}) : cfg_(cfg) {}
  double update(double lr, double validation_loss);
  const std::vector<double>& history() const { return history_; }

 private:
  PlateauConfig cfg_;
  std::vector<double> history_;
  std::size_t window_start_ = 0;
};

}  // namespace mutflow
