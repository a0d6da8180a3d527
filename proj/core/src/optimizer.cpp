// SPDX-License-Identifier: Apache-2.0

#include "propnet/optimizer.hpp"

#include <cmath>

namespace propnet {

template <typename T>
void nesterov_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr, T momentum,
                   T weight_decay, bool nesterov) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("nesterov_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericalError("non-finite gradient " + std::to_string(grad[i]) + " at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] - lr * g;
    param[i] += nesterov ? momentum * velocity[i] - lr * g : velocity[i];
  }
}

template <typename T>
void SgdOptimizer<T>::step(ParamStore<T>& params, double lr) {
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.grad.numel(); ++i) {
      if (!std::isfinite(e.grad[i])) {
        throw NumericalError("non-finite gradient in '" + e.name + "' at index " + std::to_string(i));
      }
    }
  }
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    auto it = velocity_.find(e.name);
    if (it == velocity_.end()) it = velocity_.emplace(e.name, Tensor<T>(e.value.shape())).first;
    nesterov_step<T>(e.value.data(), e.grad.data(), it->second.data(), static_cast<T>(lr),
                     static_cast<T>(cfg_.momentum), static_cast<T>(cfg_.weight_decay), cfg_.nesterov);
  }
}

template void nesterov_step<float>(std::span<float>, std::span<const float>, std::span<float>, float, float, float,
                                   bool);
template void nesterov_step<double>(std::span<double>, std::span<const double>, std::span<double>, double, double,
                                    double, bool);
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace propnet
