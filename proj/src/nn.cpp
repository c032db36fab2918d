#include "mutflow/nn.hpp"

#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow::nn {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool bias, Init init)
    : in_(in), out_(out) {
  if (in == 0 || out == 0) throw ContractError("Linear " + name + ": zero width");
  w_ = &store.create(name + ".w", init == Init::zeros ? Tensor({in, out}, 0.0) : uniform_init({in, out}, in, rng));
  if (bias) {
    b_ = &store.create(name + ".b", init == Init::zeros ? Tensor({out}, 0.0) : uniform_init({out}, in, rng));
  }
}

Var Linear::operator()(Graph& g, Var x) const {
  Var y = ops::matmul(x, g.parameter(*w_));
  if (b_) y = ops::add(y, g.parameter(*b_));
  return y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width, double eps)
    : eps_(eps) {
  gain_ = &store.create(name + ".gain", Tensor({width}, 1.0));
  shift_ = &store.create(name + ".shift", Tensor({width}, 0.0));
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  Var y = ops::layer_norm(x, eps_);
  return ops::add(ops::mul(y, g.parameter(*gain_)), g.parameter(*shift_));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng,
         Init last_init) {
  if (widths.size() < 2) throw ContractError("Mlp " + name + ": needs input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(store, name + ".fc" + std::to_string(i), widths[i], widths[i + 1], rng, true,
                         last ? last_init : Init::uniform);
  }
}

Var Mlp::operator()(Graph& g, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](g, x);
    if (i + 1 < layers_.size()) x = ops::relu(x);
  }
  return x;
}

}  // namespace mutflow::nn
