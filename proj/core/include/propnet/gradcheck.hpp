// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "propnet/autograd.hpp"

namespace propnet {

struct GradcheckOptions {
  double eps = 1e-5;
  std::size_t coords_per_tensor = 64;
  /// Floor of the relative-error denominator. Differences at eps
  /// resolve gradients only to about ulp(loss) / eps, roughly 4e-11 for
  /// eps = 1e-5, so smaller gradients are compared absolutely.
  double min_scale = 1e-4;
  std::uint64_t seed = 1;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a ReLU kink
};

/// Builds a fresh graph and returns the scalar loss node.
using LossBuilder = std::function<Var(Graph<double>&)>;

/// Compares reverse-mode gradients against the five-point central difference
/// (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h for a sample of coordinates of
/// every trainable tensor in store (all coordinates when a tensor has fewer
/// than coords_per_tensor). The two-point formula's eps^2 truncation term
/// reaches 1e-9 on small batch-normalized maps. A coordinate is skipped when
/// the four evaluations put some ReLU input on different sides of zero. Relative error is |ga - gn| / max(|ga|, |gn|, min_scale).
GradcheckReport gradcheck(const LossBuilder& build, ParamStore<double>& store, const GradcheckOptions& opts = {});

}  // namespace propnet
