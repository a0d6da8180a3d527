// SPDX-License-Identifier: Apache-2.0
//
// Slow reference implementations used as test oracles.

#pragma once

#include <algorithm>
#include <cmath>

#include "propnet/kernels.hpp"
#include "propnet/rng.hpp"

namespace oracle {

using propnet::ConvGeometry;
using propnet::Shape;
using propnet::Tensor;

inline long in_coord(std::size_t out, std::size_t k, const ConvGeometry& g) {
  return static_cast<long>(out * g.stride + k) - static_cast<long>(g.padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  const auto n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const auto co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const auto oh = (h + 2 * g.padding - kh) / g.stride + 1;
  const auto ow = (wd + 2 * g.padding - kw) / g.stride + 1;
  Tensor<T> y(Shape{n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = in_coord(oy, ky, g), ix = in_coord(ox, kx, g);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at(b, i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * w.at(o, i, ky, kx);
              }
          y.at(b, o, oy, ox) = acc;
        }
  return y;
}

/// Input and kernel gradients of sum(conv(x, w) * gy).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g,
                                                const Tensor<T>& gy) {
  Tensor<T> gx(x.shape()), gw(w.shape());
  const auto n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const auto co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const auto oh = gy.shape()[2], ow = gy.shape()[3];
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = in_coord(oy, ky, g), ix = in_coord(ox, kx, g);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
                gx.at(b, i, uy, ux) += w.at(o, i, ky, kx) * gy.at(b, o, oy, ox);
                gw.at(o, i, ky, kx) += x.at(b, i, uy, ux) * gy.at(b, o, oy, ox);
              }
  return {gx, gw};
}

template <typename T>
Tensor<T> random_tensor(const Shape& s, propnet::Stream& rng) {
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
  return t;
}

/// max |a - b| / max |b|
template <typename T>
double normwise_rel(const Tensor<T>& a, const Tensor<T>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return scale == 0.0 ? diff : diff / scale;
}

}  // namespace oracle
