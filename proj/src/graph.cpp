#include "mutflow/graph.hpp"

#include "mutflow/error.hpp"
#include "mutflow/simd/kernels.hpp"

namespace mutflow {

Parameter& ParameterStore::create(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw ContractError("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.shape(), 0.0);
  p->value = std::move(init);
  p->trainable = trainable;
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : it->second.get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : it->second.get();
}

Parameter& ParameterStore::at(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw ContractError("unknown parameter " + name);
}

const Parameter& ParameterStore::at(const std::string& name) const {
  if (auto* p = find(name)) return *p;
  throw ContractError("unknown parameter " + name);
}

std::vector<Parameter*> ParameterStore::with_prefix(std::string_view prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
  for (Parameter* p : with_prefix(prefix)) p->trainable = trainable;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p->grad.fill(0.0);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p->value.size();
  return n;
}

std::map<std::string, Tensor> ParameterStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out.emplace(name, p->value);
  return out;
}

void ParameterStore::restore(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, value] : values) {
    Parameter& p = at(name);
    if (p.value.shape() != value.shape()) {
      throw ShapeError("restore " + name + ": shape " + shape_string(value.shape()) +
                       " does not match " + shape_string(p.value.shape()));
    }
    p.value = value;
  }
}

const Tensor& Var::value() const { return graph->value(id); }
const Shape& Var::shape() const { return graph->value(id).shape(); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::input(const std::string& name, Tensor value, bool requires_grad) {
  if (!all_finite(value.values())) throw NumericError("input '" + name + "' contains NaN or Inf");
  nodes_.push_back(Node{"input", std::move(value), {}, {}, {}, nullptr, requires_grad});
  inputs_[name] = nodes_.size() - 1;
  return Var{this, nodes_.size() - 1};
}

Var Graph::named_input(const std::string& name) const {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw ContractError("graph has no input named " + name);
  return Var{const_cast<Graph*>(this), it->second};
}

Var Graph::parameter(Parameter& param) {
  auto it = param_nodes_.find(&param);
  if (it != param_nodes_.end()) return Var{this, it->second};
  nodes_.push_back(Node{"parameter", param.value, {}, {}, {}, &param, param.trainable});
  param_nodes_[&param] = nodes_.size() - 1;
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<std::size_t> parents,
                  BackwardFn fn) {
  const std::size_t id = nodes_.size();
  if (!all_finite(value.values())) {
    throw NumericError("node #" + std::to_string(id) + " (" + std::string(op) +
                       "): non-finite value");
  }
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  Node node{op, std::move(value), {}, std::move(parents), {}, nullptr, needs};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, id};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

std::string Graph::describe(std::size_t id) const {
  return "node #" + std::to_string(id) + " (" + std::string(nodes_[id].op) + ")";
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  const auto& k = simd::active_kernels();
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      k.accumulate(n.grad.data(), n.param->grad.data(), n.grad.size());
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

}  // namespace mutflow
