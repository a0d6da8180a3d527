// SPDX-License-Identifier: Apache-2.0

#include "propnet/autograd.hpp"

#include <utility>

namespace propnet {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConv: return "conv";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kRelu: return "relu";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kAvgPool: return "avgpool";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kLinear: return "linear";
    case OpKind::kMul: return "mul";
    case OpKind::kSum: return "sum";
    case OpKind::kLoss: return "loss";
  }
  return "?";
}

// ---------------------------------------------------------------- ParamStore

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<T> grad(value.shape());
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), std::move(grad), trainable});
  return entries_.back();
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(T(0));
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.numel();
  }
  return n;
}

// --------------------------------------------------------------------- Graph

template <typename T>
Var Graph<T>::push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn backward,
                   double flops) {
  Node n;
  n.kind = kind;
  n.region = region_;
  n.stage = stage_;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(backward);
  n.flops = flops;
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  param_owner_.push_back(nullptr);
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::input(Tensor<T> value) {
  return push(OpKind::kInput, {}, std::move(value), nullptr);
}

template <typename T>
Var Graph<T>::param(ParamStore<T>& store, const std::string& name) {
  auto& e = store.entry(name);
  Var v = push(OpKind::kParam, {}, e.value, nullptr);
  nodes_.back().param_name = name;
  if (e.trainable) param_owner_.back() = &store;
  return v;
}

template <typename T>
void Graph<T>::accumulate(std::size_t id, const Tensor<T>& delta) {
  auto& g = grads_.at(id);
  if (g.empty()) {
    require_same_shape(nodes_[id].value.shape(), delta.shape(), "gradient accumulation");
    g = delta;
    return;
  }
  require_same_shape(g.shape(), delta.shape(), "gradient accumulation");
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (nodes_.at(loss.id).value.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + nodes_[loss.id].value.shape().str());
  }
  for (auto& g : grads_) g = Tensor<T>();
  grads_[loss.id] = Tensor<T>(nodes_[loss.id].value.shape(), T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (grads_[i].empty()) continue;
    const Node& n = nodes_[i];
    // Callbacks only accumulate into lower ids, so grads_[i] stays put.
    if (n.backward) n.backward(*this, grads_[i]);
    if (n.kind == OpKind::kParam && param_owner_[i] != nullptr) {
      auto& acc = param_owner_[i]->grad(n.param_name);
      for (std::size_t k = 0; k < acc.numel(); ++k) acc[k] += grads_[i][k];
    }
  }
}

template <typename T>
void Graph<T>::commit_stats(ParamStore<T>& store) {
  for (const auto& u : stat_updates_) {
    auto& mean = store.value(u.mean_name);
    auto& var = store.value(u.var_name);
    for (std::size_t c = 0; c < mean.numel(); ++c) {
      mean[c] = u.momentum * mean[c] + (T(1) - u.momentum) * u.batch_mean[c];
      var[c] = u.momentum * var[c] + (T(1) - u.momentum) * u.batch_var[c];
    }
  }
  stat_updates_.clear();
}

// ----------------------------------------------------------------------- ops

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, const ConvGeometry& geom) {
  const Tensor<T>& in = g.value(x);
  const Tensor<T>& k = g.value(kernel);
  Tensor<T> out = conv2d(in, k, geom);
  const double flops = 2.0 * static_cast<double>(k.dim(1) * k.dim(2) * k.dim(3)) * static_cast<double>(out.numel());
  const std::size_t xi = x.id, ki = kernel.id;
  return g.push(
      OpKind::kConv, {xi, ki}, std::move(out),
      [xi, ki, geom](Graph<T>& gr, const Tensor<T>& gout) {
        auto grads = conv2d_backward(gr.value(Var{xi}), gr.value(Var{ki}), geom, gout);
        gr.accumulate(xi, grads.input);
        gr.accumulate(ki, grads.kernel);
      },
      flops);
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = relu(g.value(x));
  const double flops = static_cast<double>(out.numel());
  const std::size_t xi = x.id;
  return g.push(
      OpKind::kRelu, {xi}, std::move(out),
      [xi](Graph<T>& gr, const Tensor<T>& gout) { gr.accumulate(xi, relu_backward(gr.value(Var{xi}), gout)); },
      flops);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  Tensor<T> out = add(g.value(a), g.value(b));
  const double flops = static_cast<double>(out.numel());
  const std::size_t ai = a.id, bi = b.id;
  return g.push(
      OpKind::kAdd, {ai, bi}, std::move(out),
      [ai, bi](Graph<T>& gr, const Tensor<T>& gout) {
        gr.accumulate(ai, gout);
        gr.accumulate(bi, gout);
      },
      flops);
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  Tensor<T> out = scalar_mul(g.value(a), s);
  const double flops = static_cast<double>(out.numel());
  const std::size_t ai = a.id;
  return g.push(
      OpKind::kScale, {ai}, std::move(out),
      [ai, s](Graph<T>& gr, const Tensor<T>& gout) { gr.accumulate(ai, scalar_mul(gout, s)); }, flops);
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
  const Shape in_shape = g.value(x).shape();
  Tensor<T> out = global_avg_pool(g.value(x));
  const std::size_t xi = x.id;
  return g.push(
      OpKind::kAvgPool, {xi}, std::move(out),
      [xi, in_shape](Graph<T>& gr, const Tensor<T>& gout) {
        gr.accumulate(xi, global_avg_pool_backward(in_shape, gout));
      },
      static_cast<double>(in_shape.numel()));
}

template <typename T>
Var flatten(Graph<T>& g, Var x) {
  const Tensor<T>& in = g.value(x);
  const Shape in_shape = in.shape();
  const std::size_t n = in_shape[0];
  Tensor<T> out = in.reshaped(Shape{n, in.numel() / n});
  const std::size_t xi = x.id;
  return g.push(OpKind::kFlatten, {xi}, std::move(out), [xi, in_shape](Graph<T>& gr, const Tensor<T>& gout) {
    gr.accumulate(xi, gout.reshaped(in_shape));
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  Tensor<T> out = linear(g.value(x), g.value(weight), g.value(bias));
  const double flops = 2.0 * static_cast<double>(g.value(weight).numel()) * static_cast<double>(out.dim(0));
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return g.push(
      OpKind::kLinear, {xi, wi, bi}, std::move(out),
      [xi, wi, bi](Graph<T>& gr, const Tensor<T>& gout) {
        auto lg = linear_backward(gr.value(Var{xi}), gr.value(Var{wi}), gout);
        gr.accumulate(xi, lg.input);
        gr.accumulate(wi, lg.weight);
        gr.accumulate(bi, lg.bias);
      },
      flops);
}

template <typename T>
Var mul_const(Graph<T>& g, Var x, const Tensor<T>& c) {
  const Tensor<T>& in = g.value(x);
  require_same_shape(in.shape(), c.shape(), "mul_const");
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] * c[i];
  const std::size_t xi = x.id;
  return g.push(OpKind::kMul, {xi}, std::move(out), [xi, c](Graph<T>& gr, const Tensor<T>& gout) {
    Tensor<T> d(gout.shape());
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = gout[i] * c[i];
    gr.accumulate(xi, d);
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const Tensor<T>& in = g.value(x);
  T s = 0;
  for (std::size_t i = 0; i < in.numel(); ++i) s += in[i];
  const Shape in_shape = in.shape();
  const std::size_t xi = x.id;
  return g.push(OpKind::kSum, {xi}, Tensor<T>::scalar(s), [xi, in_shape](Graph<T>& gr, const Tensor<T>& gout) {
    gr.accumulate(xi, Tensor<T>(in_shape, gout[0]));
  });
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;

#define PROPNET_INSTANTIATE(T)                                            \
  template Var conv2d(Graph<T>&, Var, Var, const ConvGeometry&);          \
  template Var relu(Graph<T>&, Var);                                      \
  template Var add(Graph<T>&, Var, Var);                                  \
  template Var scale(Graph<T>&, Var, T);                                  \
  template Var global_avg_pool(Graph<T>&, Var);                           \
  template Var flatten(Graph<T>&, Var);                                   \
  template Var linear(Graph<T>&, Var, Var, Var);                          \
  template Var mul_const(Graph<T>&, Var, const Tensor<T>&);               \
  template Var sum(Graph<T>&, Var);

PROPNET_INSTANTIATE(float)
PROPNET_INSTANTIATE(double)

#undef PROPNET_INSTANTIATE

}  // namespace propnet
