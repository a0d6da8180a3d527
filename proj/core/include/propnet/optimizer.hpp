// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>

#include "propnet/autograd.hpp"

namespace propnet {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool nesterov = true;
};

/// One SGD update of a flat parameter buffer:
///   g = grad + weight_decay * param
///   v = momentum * v - lr * g
///   param += momentum * v - lr * g   (Nesterov)
///   param += v                       (classical momentum)
/// Throws NumericalError on a non-finite gradient before touching anything.
template <typename T>
void nesterov_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr, T momentum,
                   T weight_decay, bool nesterov = true);

/// Momentum SGD over every trainable entry of a ParamStore. Velocities are
/// created lazily with zeros.
template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<T>& params, double lr);

  const SgdConfig& config() const { return cfg_; }
  std::map<std::string, Tensor<T>>& velocities() { return velocity_; }
  const std::map<std::string, Tensor<T>>& velocities() const { return velocity_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor<T>> velocity_;
};

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;

}  // namespace propnet
