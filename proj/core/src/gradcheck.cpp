// SPDX-License-Identifier: Apache-2.0

#include "propnet/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "propnet/rng.hpp"

namespace propnet {
namespace {

struct Probe {
  double loss = 0.0;
  std::vector<bool> relu_signs;
};

Probe evaluate(const LossBuilder& build) {
  Graph<double> g;
  const Var loss = build(g);
  Probe p;
  p.loss = g.value(loss)[0];
  for (const auto& n : g.nodes()) {
    if (n.kind != OpKind::kRelu) continue;
    const auto& in = g.nodes()[n.inputs[0]].value;
    for (std::size_t i = 0; i < in.numel(); ++i) p.relu_signs.push_back(in[i] > 0.0);
  }
  return p;
}

}  // namespace

GradcheckReport gradcheck(const LossBuilder& build, ParamStore<double>& store, const GradcheckOptions& opts) {
  store.zero_grad();
  {
    Graph<double> g;
    g.backward(build(g));
  }
  GradcheckReport report;
  Stream rng(opts.seed);
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    const std::size_t n = e.value.numel();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::size_t accepted = 0;
    for (std::size_t idx : order) {
      if (accepted >= opts.coords_per_tensor) break;
      const double orig = e.value[idx];
      std::array<Probe, 4> at;  // orig + k * eps for k = -2, -1, 1, 2
      const std::array<double, 4> steps{-2.0, -1.0, 1.0, 2.0};
      for (std::size_t k = 0; k < 4; ++k) {
        e.value[idx] = orig + steps[k] * opts.eps;
        at[k] = evaluate(build);
      }
      e.value[idx] = orig;
      if (!std::all_of(at.begin() + 1, at.end(), [&](const Probe& p) { return p.relu_signs == at[0].relu_signs; })) {
        ++report.skipped;
        continue;
      }
      ++accepted;
      ++report.checked;
      const double numeric =
          (8.0 * (at[2].loss - at[1].loss) - (at[3].loss - at[0].loss)) / (12.0 * opts.eps);
      const double analytic = e.grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.min_scale});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = e.name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace propnet
