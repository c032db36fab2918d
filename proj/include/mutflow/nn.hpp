#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mutflow/graph.hpp"
#include "mutflow/ops.hpp"

namespace mutflow::nn {

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

enum class Init { uniform, zeros };

// y = x W + b with W stored [in, out]; x is [rows, in].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true, Init init = Init::uniform);

  Var operator()(Graph& g, Var x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Parameter& weight() const { return *w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

// Layer normalisation over the last axis with learned gain and shift.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width, double eps = 1e-5);
  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* shift_ = nullptr;
  double eps_ = 1e-5;
};

// Stack of Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng,
      Init last_init = Init::uniform);
  Var operator()(Graph& g, Var x) const;

 private:
  std::vector<Linear> layers_;
};

}  // namespace mutflow::nn
