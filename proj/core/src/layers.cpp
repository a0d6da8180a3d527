// SPDX-License-Identifier: Apache-2.0

#include "propnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "propnet/rng.hpp"

namespace propnet {
namespace {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

template <typename T>
void check_bn_input(const Tensor<T>& x, std::size_t channels) {
  if (x.rank() != 4) throw ShapeError("batchnorm expects NCHW input, got " + x.shape().str());
  if (x.dim(1) != channels) {
    throw ShapeError("batchnorm: input " + x.shape().str() + " has wrong channel count for " +
                     std::to_string(channels) + " channels");
  }
}

template <typename T>
ChannelStats batch_stats(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = n * hw;
  if (count < 2) {
    throw ConfigError("batchnorm: train mode needs at least two values per channel, got input " + x.shape().str());
  }
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x.raw() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    }
    const double mean = acc / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x.raw() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    s.mean[ch] = mean;
    s.var[ch] = sq / static_cast<double>(count);
  }
  return s;
}

// y = gamma * (x - mean) * inv_std + beta, per channel.
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const std::vector<double>& mean, const std::vector<double>& inv_std,
                    const Tensor<T>& gamma, const Tensor<T>& beta) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T m = static_cast<T>(mean[ch]);
      const T s = static_cast<T>(inv_std[ch]);
      const T* p = x.raw() + (b * c + ch) * hw;
      T* q = y.raw() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) q[i] = gamma[ch] * ((p[i] - m) * s) + beta[ch];
    }
  }
  return y;
}

std::vector<double> inverse_std(const std::vector<double>& var, double eps) {
  std::vector<double> out(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) out[i] = 1.0 / std::sqrt(var[i] + eps);
  return out;
}

}  // namespace

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor<T>(Shape{channels}, T(1));
  s.beta = Tensor<T>(Shape{channels}, T(0));
  s.running_mean = Tensor<T>(Shape{channels}, T(0));
  s.running_var = Tensor<T>(Shape{channels}, T(1));
  return s;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state) {
  const std::size_t c = state.gamma.numel();
  check_bn_input(input, c);
  if (state.mode == Mode::kEval) {
    std::vector<double> mean(c), var(c);
    for (std::size_t i = 0; i < c; ++i) {
      mean[i] = state.running_mean[i];
      var[i] = state.running_var[i];
    }
    return normalize(input, mean, inverse_std(var, state.config.epsilon), state.gamma, state.beta);
  }
  const ChannelStats s = batch_stats(input);
  const double count = static_cast<double>(input.numel() / c);
  const double mom = state.config.momentum;
  for (std::size_t i = 0; i < c; ++i) {
    const double unbiased = s.var[i] * count / (count - 1.0);
    state.running_mean[i] = static_cast<T>(mom * state.running_mean[i] + (1.0 - mom) * s.mean[i]);
    state.running_var[i] = static_cast<T>(mom * state.running_var[i] + (1.0 - mom) * unbiased);
  }
  return normalize(input, s.mean, inverse_std(s.var, state.config.epsilon), state.gamma, state.beta);
}

template <typename T>
void add_batchnorm_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
  store.add(prefix + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  store.add(prefix + ".beta", Tensor<T>(Shape{channels}, T(0)));
  store.add(prefix + ".running_mean", Tensor<T>(Shape{channels}, T(0)), false);
  store.add(prefix + ".running_var", Tensor<T>(Shape{channels}, T(1)), false);
}

template <typename T>
Var batchnorm(Graph<T>& g, ParamStore<T>& store, const std::string& prefix, Var x, Mode mode,
              const BatchNormConfig& cfg) {
  const Var gamma = g.param(store, prefix + ".gamma");
  const Var beta = g.param(store, prefix + ".beta");
  const Tensor<T>& in = g.value(x);
  const std::size_t c = g.value(gamma).numel();
  check_bn_input(in, c);
  const std::size_t n = in.dim(0), hw = in.dim(2) * in.dim(3);
  const double count = static_cast<double>(n * hw);

  std::vector<double> mean(c), var(c);
  if (mode == Mode::kTrain) {
    ChannelStats s = batch_stats(in);
    mean = std::move(s.mean);
    var = std::move(s.var);
    typename Graph<T>::StatUpdate upd{prefix + ".running_mean", prefix + ".running_var", Tensor<T>(Shape{c}),
                                      Tensor<T>(Shape{c}), static_cast<T>(cfg.momentum)};
    for (std::size_t i = 0; i < c; ++i) {
      upd.batch_mean[i] = static_cast<T>(mean[i]);
      upd.batch_var[i] = static_cast<T>(var[i] * count / (count - 1.0));
    }
    g.stat_updates().push_back(std::move(upd));
  } else {
    const auto& rm = store.value(prefix + ".running_mean");
    const auto& rv = store.value(prefix + ".running_var");
    for (std::size_t i = 0; i < c; ++i) {
      mean[i] = rm[i];
      var[i] = rv[i];
    }
  }
  const std::vector<double> inv_std = inverse_std(var, cfg.epsilon);
  Tensor<T> out = normalize(in, mean, inv_std, g.value(gamma), g.value(beta));

  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  const bool train = mode == Mode::kTrain;
  return g.push(
      OpKind::kBatchNorm, {xi, gi, bi}, std::move(out),
      [xi, gi, bi, mean, inv_std, train, n, c, hw](Graph<T>& gr, const Tensor<T>& gout) {
        const Tensor<T>& xin = gr.value(Var{xi});
        const Tensor<T>& gam = gr.value(Var{gi});
        Tensor<T> dx(xin.shape()), dgamma(Shape{c}), dbeta(Shape{c});
        const double m = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const T* xp = xin.raw() + (b * c + ch) * hw;
            const T* gp = gout.raw() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (xp[i] - mean[ch]) * inv_std[ch];
              sum_dy += gp[i];
              sum_dy_xhat += gp[i] * xhat;
            }
          }
          dgamma[ch] = static_cast<T>(sum_dy_xhat);
          dbeta[ch] = static_cast<T>(sum_dy);
          const double gs = gam[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const T* xp = xin.raw() + (b * c + ch) * hw;
            const T* gp = gout.raw() + (b * c + ch) * hw;
            T* dp = dx.raw() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                const double xhat = (xp[i] - mean[ch]) * inv_std[ch];
                dp[i] = static_cast<T>(gs * (gp[i] - sum_dy / m - xhat * sum_dy_xhat / m));
              } else {
                dp[i] = static_cast<T>(gs * gp[i]);
              }
            }
          }
        }
        gr.accumulate(xi, dx);
        gr.accumulate(gi, dgamma);
        gr.accumulate(bi, dbeta);
      },
      4.0 * static_cast<double>(in.numel()));
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw ShapeError("softmax_cross_entropy: logits " + logits.shape().str() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw ConfigError("label " + std::to_string(labels[i]) + " out of range [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) - (row[labels[i]] - mx);
  }
  return static_cast<T>(total / static_cast<double>(n));
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::uint32_t> labels) {
  const Tensor<T>& in = g.value(logits);
  const T loss = softmax_cross_entropy(in, labels);
  const std::size_t n = in.dim(0), k = in.dim(1);
  Tensor<T> dlogits(in.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = in.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - mx) / z;
      dlogits[i * k + j] = static_cast<T>((p - (labels[i] == j ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  const std::size_t li = logits.id;
  return g.push(OpKind::kLoss, {li}, Tensor<T>::scalar(loss),
                [li, dlogits = std::move(dlogits)](Graph<T>& gr, const Tensor<T>& gout) {
                  gr.accumulate(li, scalar_mul(dlogits, gout[0]));
                });
}

template <typename T>
Tensor<T> he_normal(const Shape& shape, std::uint64_t seed, const std::string& name) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.rank(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Stream rng(mix_seed(seed, fnv1a(name)));
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(stddev * rng.normal());
  return out;
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

#define PROPNET_INSTANTIATE(T)                                                                              \
  template struct BatchNormState<T>;                                                                        \
  template Tensor<T> batchnorm(const Tensor<T>&, BatchNormState<T>&);                                       \
  template Var batchnorm(Graph<T>&, ParamStore<T>&, const std::string&, Var, Mode, const BatchNormConfig&); \
  template void add_batchnorm_params(ParamStore<T>&, const std::string&, std::size_t);                      \
  template T softmax_cross_entropy(const Tensor<T>&, std::span<const std::uint32_t>);                       \
  template Var softmax_cross_entropy(Graph<T>&, Var, std::span<const std::uint32_t>);                       \
  template Tensor<T> he_normal(const Shape&, std::uint64_t, const std::string&);                            \
  template std::vector<std::uint32_t> argmax_rows(const Tensor<T>&);

PROPNET_INSTANTIATE(float)
PROPNET_INSTANTIATE(double)

#undef PROPNET_INSTANTIATE

}  // namespace propnet
