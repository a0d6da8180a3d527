// SPDX-License-Identifier: Apache-2.0

#include "propnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>
#include <vector>

#include "propnet/parallel.hpp"

namespace propnet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvDims {
  std::size_t n, c, h, w;
  std::size_t o, kh, kw;
  std::size_t oh, ow;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW kernel, got " + input.shape().str() + " and " +
                     kernel.shape().str());
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input channels of " + input.shape().str() + " do not match kernel " +
                     kernel.shape().str());
  }
  if (g.stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
             0, 0};
  d.oh = conv_out_extent(d.h, d.kh, g);
  d.ow = conv_out_extent(d.w, d.kw, g);
  return d;
}

// Unfolds one sample [C,H,W] into [C*kh*kw, oh*ow].
template <typename T>
void im2col(const T* img, const ConvDims& d, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const T* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        T* dst = col + row * d.col_cols();
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * stride - pad + static_cast<std::ptrdiff_t>(ki);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(dst + y * d.ow, dst + (y + 1) * d.ow, T(0));
            continue;
          }
          const T* src = plane + iy * static_cast<std::ptrdiff_t>(d.w);
          for (std::size_t x = 0; x < d.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x) * stride - pad + static_cast<std::ptrdiff_t>(kj);
            dst[y * d.ow + x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvDims& d, const ConvGeometry& g, T* img) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  std::fill(img, img + d.c * d.h * d.w, T(0));
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    T* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        const T* src = col + row * d.col_cols();
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * stride - pad + static_cast<std::ptrdiff_t>(ki);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* dst = plane + iy * static_cast<std::ptrdiff_t>(d.w);
          for (std::size_t x = 0; x < d.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x) * stride - pad + static_cast<std::ptrdiff_t>(kj);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) dst[ix] += src[y * d.ow + x];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvDims& d, const ConvGeometry& g) {
  return d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  const std::size_t padded = in + 2 * g.padding;
  if (g.stride == 0 || padded < k) {
    throw ShapeError("convolution window " + std::to_string(k) + " does not fit input extent " + std::to_string(in) +
                     " with padding " + std::to_string(g.padding));
  }
  return (padded - k) / g.stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g) {
  const ConvDims d = conv_dims(input, kernel, g);
  Tensor<T> out(Shape{d.n, d.o, d.oh, d.ow});
  const ConstMapMat<T> wmat(kernel.raw(), d.o, d.col_rows());
  const bool pointwise = is_pointwise(d, g);
  parallel_for(d.n, [&](std::size_t n) {
    const T* img = input.raw() + n * d.c * d.h * d.w;
    std::vector<T> col;
    const T* colp = img;
    if (!pointwise) {
      col.resize(d.col_rows() * d.col_cols());
      im2col(img, d, g, col.data());
      colp = col.data();
    }
    MapMat<T> omat(out.raw() + n * d.o * d.col_cols(), d.o, d.col_cols());
    omat.noalias() = wmat * ConstMapMat<T>(colp, d.col_rows(), d.col_cols());
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g,
                             const Tensor<T>& grad_out) {
  const ConvDims d = conv_dims(input, kernel, g);
  require_same_shape(grad_out.shape(), Shape{d.n, d.o, d.oh, d.ow}, "conv2d_backward");
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape())};
  const ConstMapMat<T> wmat(kernel.raw(), d.o, d.col_rows());
  const bool pointwise = is_pointwise(d, g);
  // Per-sample kernel gradients are reduced afterwards in sample order so the
  // sum does not depend on the worker split.
  std::vector<RowMat<T>> partial(d.n);
  parallel_for(d.n, [&](std::size_t n) {
    const T* img = input.raw() + n * d.c * d.h * d.w;
    const ConstMapMat<T> gmat(grad_out.raw() + n * d.o * d.col_cols(), d.o, d.col_cols());
    std::vector<T> col;
    const T* colp = img;
    if (!pointwise) {
      col.resize(d.col_rows() * d.col_cols());
      im2col(img, d, g, col.data());
      colp = col.data();
    }
    partial[n].noalias() = gmat * ConstMapMat<T>(colp, d.col_rows(), d.col_cols()).transpose();
    T* gimg = grads.input.raw() + n * d.c * d.h * d.w;
    if (pointwise) {
      MapMat<T>(gimg, d.col_rows(), d.col_cols()).noalias() = wmat.transpose() * gmat;
    } else {
      RowMat<T> gcol = wmat.transpose() * gmat;
      col2im(gcol.data(), d, g, gimg);
    }
  });
  MapMat<T> gw(grads.kernel.raw(), d.o, d.col_rows());
  for (std::size_t n = 0; n < d.n; ++n) gw += partial[n];
  return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + x.shape().str());
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c, 1, 1});
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = 0;
    const T* p = x.raw() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / static_cast<T>(hw);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const std::size_t n = input_shape[0], c = input_shape[1], hw = input_shape[2] * input_shape[3];
  require_same_shape(grad_out.shape(), Shape{n, c, 1, 1}, "global_avg_pool_backward");
  Tensor<T> out(input_shape);
  for (std::size_t i = 0; i < n * c; ++i) {
    const T g = grad_out[i] / static_cast<T>(hw);
    std::fill(out.raw() + i * hw, out.raw() + (i + 1) * hw, g);
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: incompatible shapes x " + x.shape().str() + ", weight " + weight.shape().str() +
                     ", bias " + bias.shape().str());
  }
  const std::size_t n = x.dim(0), k = x.dim(1), o = weight.dim(0);
  Tensor<T> out(Shape{n, o});
  MapMat<T> omat(out.raw(), n, o);
  omat.noalias() = ConstMapMat<T>(x.raw(), n, k) * ConstMapMat<T>(weight.raw(), o, k).transpose();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < o; ++j) out[i * o + j] += bias[j];
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out) {
  const std::size_t n = x.dim(0), k = x.dim(1), o = weight.dim(0);
  require_same_shape(grad_out.shape(), Shape{n, o}, "linear_backward");
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>(Shape{o})};
  const ConstMapMat<T> gmat(grad_out.raw(), n, o);
  MapMat<T>(g.input.raw(), n, k).noalias() = gmat * ConstMapMat<T>(weight.raw(), o, k);
  MapMat<T>(g.weight.raw(), o, k).noalias() = gmat.transpose() * ConstMapMat<T>(x.raw(), n, k);
  for (std::size_t j = 0; j < o; ++j) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += grad_out[i * o + j];
    g.bias[j] = s;
  }
  return g;
}

#define PROPNET_INSTANTIATE(T)                                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);                           \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,                \
                                        const Tensor<T>&);                                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                                    \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> scalar_mul(const Tensor<T>&, T);                                                           \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                         \
  template Tensor<T> global_avg_pool_backward(const Shape&, const Tensor<T>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

PROPNET_INSTANTIATE(float)
PROPNET_INSTANTIATE(double)

#undef PROPNET_INSTANTIATE

}  // namespace propnet
