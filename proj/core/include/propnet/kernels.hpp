// SPDX-License-Identifier: Apache-2.0
//
// Numeric kernels on plain tensors. These are the building blocks for the
// autograd ops; none of them keep state.

#pragma once

#include <cstddef>

#include "propnet/tensor.hpp"

namespace propnet {

/// Stride and symmetric zero padding of a 2-D convolution. The kernel itself is
/// passed alongside (OIHW).
struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // [O, I, kh, kw]
  ConvGeometry geometry;
};

/// Output spatial extent, floor((in + 2 pad - k) / stride) + 1. Throws if the
/// window does not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g);

/// Cross-correlation of an NCHW input with an OIHW kernel, computed by im2col
/// and a matrix product per sample.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  return conv2d(input, p.kernel, p.geometry);
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g,
                             const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Passes grad where the forward input was strictly positive; the subgradient
/// at zero is zero.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s);

/// [N,C,H,W] -> [N,C,1,1]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

/// x [N,K], weight [O,K], bias [O] -> [N,O]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out);

}  // namespace propnet
