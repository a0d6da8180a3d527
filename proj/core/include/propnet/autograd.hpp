// SPDX-License-Identifier: Apache-2.0
//
// Tape-style reverse-mode differentiation. A Graph is rebuilt on every
// forward pass; node ids are assigned in creation order, which is a
// topological order by construction.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "propnet/kernels.hpp"
#include "propnet/tensor.hpp"

namespace propnet {

/// Named parameters and buffers. Buffers (trainable == false) hold state such
/// as batch-norm running statistics; they never receive gradients.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
  };

  Entry& add(const std::string& name, Tensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }
  const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();
  /// Number of trainable scalars.
  std::size_t trainable_count() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class OpKind : std::uint8_t {
  kInput,
  kParam,
  kConv,
  kBatchNorm,
  kRelu,
  kAdd,
  kScale,
  kAvgPool,
  kFlatten,
  kLinear,
  kMul,
  kSum,
  kLoss,
};

const char* to_string(OpKind k);

/// Where in a network a node sits. Ratio accounting only looks at the trunk.
enum class Region : std::uint8_t { kStem, kTrunk, kShortcut, kHead };

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  struct Node {
    OpKind kind = OpKind::kInput;
    Region region = Region::kStem;
    int stage = -1;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    BackwardFn backward;
    std::string param_name;
    double flops = 0.0;
  };

  /// Deferred running-statistics update produced by a train-mode batch norm.
  struct StatUpdate {
    std::string mean_name;
    std::string var_name;
    Tensor<T> batch_mean;
    Tensor<T> batch_var;  // unbiased
    T momentum;
  };

  Var input(Tensor<T> value);
  Var param(ParamStore<T>& store, const std::string& name);
  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn backward, double flops = 0.0);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Adds delta into the gradient of node id.
  void accumulate(std::size_t id, const Tensor<T>& delta);
  /// Gradient of a node after backward(); empty if the node was not reached.
  const Tensor<T>& grad(Var v) const { return grads_.at(v.id); }

  /// Reverse accumulation from a scalar node. Parameter gradients are added to
  /// their ParamStore accumulators, so two calls without zeroing double them.
  void backward(Var loss);

  void set_scope(Region region, int stage = -1) {
    region_ = region;
    stage_ = stage;
  }
  Region region() const { return region_; }
  int stage() const { return stage_; }

  std::vector<StatUpdate>& stat_updates() { return stat_updates_; }
  /// Applies the deferred running-stat updates to the store.
  void commit_stats(ParamStore<T>& store);

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<ParamStore<T>*> param_owner_;
  std::vector<StatUpdate> stat_updates_;
  Region region_ = Region::kStem;
  int stage_ = -1;
};

// Differentiable ops on graph variables.

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, const ConvGeometry& geom);
template <typename T>
Var relu(Graph<T>& g, Var x);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var scale(Graph<T>& g, Var a, T s);
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);
/// [N,C,1,1] -> [N,C]
template <typename T>
Var flatten(Graph<T>& g, Var x);
template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias);
/// Elementwise product with a constant tensor.
template <typename T>
Var mul_const(Graph<T>& g, Var x, const Tensor<T>& c);
/// Sum of all elements, as a [1] tensor.
template <typename T>
Var sum(Graph<T>& g, Var x);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace propnet
