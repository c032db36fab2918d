#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mutflow/tensor.hpp"

namespace mutflow {

// All stochastic choices in the library draw from this 64-bit Mersenne Twister,
// seeded explicitly by the caller.
using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Owns named parameters. Addresses are stable for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Tensor init, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, std::unique_ptr<Parameter>>& items() const { return params_; }
  std::vector<Parameter*> with_prefix(std::string_view prefix);
  std::vector<Parameter*> trainable();

  void set_trainable(std::string_view prefix, bool trainable);
  void zero_grad();
  std::size_t scalar_count() const;

  // Parameter values keyed by name, for snapshot/restore around validation.
  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& values);

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
};

// Define-by-run tape: every operator evaluates eagerly and records a node
// holding its value and a closure that propagates gradients to its parents.
// Nodes are appended in topological order. One graph is owned by one thread.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(const std::string& name, Tensor value, bool requires_grad = false);
  // Leaf bound to a parameter; repeated calls return the same node.
  Var parameter(Parameter& param);

  // Appends an operator node. Validates that the value is finite.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);
  // Gradient after backward(); zeros if the node received none.
  Tensor grad(Var v) const;
  Var named_input(const std::string& name) const;

  // Reverse sweep from a scalar node. Parameter gradients are added to
  // Parameter::grad so several graphs can contribute to one update.
  void backward(Var loss);

  // Error message prefix naming a node.
  std::string describe(std::size_t id) const;

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque keeps value() references valid as the tape grows
  std::map<const Parameter*, std::size_t> param_nodes_;
  std::map<std::string, std::size_t> inputs_;
};

}  // namespace mutflow
