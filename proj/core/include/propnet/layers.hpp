// SPDX-License-Identifier: Apache-2.0
//
// Layer vocabulary: batch normalization, softmax cross-entropy and the
// parameter initializers.

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "propnet/autograd.hpp"

namespace propnet {

enum class Mode : std::uint8_t { kTrain, kEval };

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.9;  // weight of the old running value
};

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  BatchNormConfig config;
  Mode mode = Mode::kTrain;

  static BatchNormState identity(std::size_t channels);
};

/// Stand-alone batch norm on an NCHW tensor. In train mode it normalizes by
/// batch statistics and folds them into the running averages.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state);

/// Graph op. Train mode records a deferred running-stat update on the graph
/// (see Graph::commit_stats); eval mode uses the stored running statistics.
template <typename T>
Var batchnorm(Graph<T>& g, ParamStore<T>& store, const std::string& prefix, Var x, Mode mode,
              const BatchNormConfig& cfg = {});

/// Registers gamma/beta (trainable) and running_mean/running_var (buffers)
/// under prefix.
template <typename T>
void add_batchnorm_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels);

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::uint32_t> labels);

/// He fan-in normal: N(0, 2 / fan_in), where fan_in is the product of all but
/// the leading extent. The stream is a pure function of (seed, name).
template <typename T>
Tensor<T> he_normal(const Shape& shape, std::uint64_t seed, const std::string& name);

/// Index of the largest element in each row of [N,K]; ties go to the lowest
/// index.
template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits);

}  // namespace propnet
