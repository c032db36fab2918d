#include "mutflow/adam.hpp"

#include <algorithm>
#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

void update_one(AdamState& s, Parameter& p, const Tensor& grad, double c1, double c2) {
  if (grad.shape() != p.value.shape()) {
    throw ContractError("adam_step: gradient shape " + shape_string(grad.shape()) + " for parameter " +
                        p.name + " of shape " + shape_string(p.value.shape()));
  }
  auto [mit, m_new] = s.m.try_emplace(p.name, p.value.shape(), 0.0);
  auto [vit, v_new] = s.v.try_emplace(p.name, p.value.shape(), 0.0);
  Tensor& m = mit->second;
  Tensor& v = vit->second;
  if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
    throw ContractError("adam_step: moment shape mismatch for " + p.name);
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p.value[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace

void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (!(state.lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (Parameter* p : params) update_one(state, *p, p->grad, c1, c2);
}

void adam_step(AdamState& state, std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads length mismatch");
  if (!(state.lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) update_one(state, *params[i], grads[i], c1, c2);
}

double plateau_decay(double lr, std::span<const double> history, const PlateauConfig& cfg) {
  if (history.size() <= cfg.patience) return lr;
  const auto split = history.end() - static_cast<std::ptrdiff_t>(cfg.patience);
  const double recent = *std::min_element(split, history.end());
  const double before = *std::min_element(history.begin(), split);
  if (recent >= before) return std::max(cfg.min_lr, lr * cfg.factor);
  return lr;
}

double PlateauScheduler::update(double lr, double validation_loss) {
  history_.push_back(validation_loss);
  std::span<const double> window(history_.data() + window_start_, history_.size() - window_start_);
  // The window keeps the best loss before the plateau as its reference point.
  const double next = plateau_decay(lr, window, cfg_);
  if (next != lr) window_start_ = history_.size() - 1;
  return next;
}

}  // namespace mutflow
