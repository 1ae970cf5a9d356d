#pragma once

#include <cmath>
#include <span>

#include "ltx/network.hpp"

namespace ltx {

// Central-difference loss gradients for every trainable, unfrozen coordinate.
// Deliberately knows nothing about backward(); this is the oracle the
// analytic gradients are checked against. f64 recommended.
template <typename T>
ParameterSet<T> finite_diff_gradient(const Network<T>& net,
                                     const ParameterSet<T>& params,
                                     const Tensor<T>& batch,
                                     std::span<const int> labels, T eps,
                                     Mode mode = Mode::train,
                                     const FrozenSet* frozen = nullptr) {
  ParameterSet<T> work = params;
  ParameterSet<T> grads = params.zeros_like();
  RunCtx<T> ctx;
  for (size_t ei = 0; ei < work.entries().size(); ++ei) {
    auto& entry = work.entries()[ei];
    if (!entry.flags.trainable) continue;
    if (frozen && frozen->count(entry.name)) continue;
    Tensor<T>& g = grads.entries()[ei].value;
    for (int64_t i = 0; i < entry.value.numel(); ++i) {
      const T saved = entry.value.data()[i];
      entry.value.data()[i] = saved + eps;
      const double up =
          net.forward(work, batch, labels, mode, ctx, frozen).loss;
      entry.value.data()[i] = saved - eps;
      const double dn =
          net.forward(work, batch, labels, mode, ctx, frozen).loss;
      entry.value.data()[i] = saved;
      const double d = (up - dn) / (2.0 * static_cast<double>(eps));
      if (!std::isfinite(d))
        throw numeric_error("non-finite finite-difference at " + entry.name);
      g.data()[i] = static_cast<T>(d);
    }
  }
  return grads;
}

// Largest relative error between analytic and finite-difference gradients.
// The floor keeps central-difference roundoff (~1e-10 absolute at eps=1e-5
// in f64) from dominating coordinates whose true gradient is near zero;
// below the floor the comparison is effectively absolute at floor*tolerance.
template <typename T>
double max_grad_rel_error(const ParameterSet<T>& analytic,
                          const ParameterSet<T>& numeric, double floor = 1e-4) {
  if (analytic.entries().size() != numeric.entries().size())
    throw contract_error("gradient sets differ in layout");
  double worst = 0.0;
  for (size_t ei = 0; ei < analytic.entries().size(); ++ei) {
    const auto& a = analytic.entries()[ei].value;
    const auto& b = numeric.entries()[ei].value;
    require_same_shape(a, b, "max_grad_rel_error");
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double x = static_cast<double>(a.data()[i]);
      const double y = static_cast<double>(b.data()[i]);
      const double denom = std::max({std::abs(x), std::abs(y), floor});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

// Companion absolute check: central differences in f64 are good to roughly
// 1e-10, so any real backward bug shows up here long before the tolerance.
template <typename T>
double max_grad_abs_error(const ParameterSet<T>& analytic,
                          const ParameterSet<T>& numeric) {
  double worst = 0.0;
  for (size_t ei = 0; ei < analytic.entries().size(); ++ei) {
    const auto& a = analytic.entries()[ei].value;
    const auto& b = numeric.entries()[ei].value;
    require_same_shape(a, b, "max_grad_abs_error");
    for (int64_t i = 0; i < a.numel(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                       static_cast<double>(b.data()[i])));
  }
  return worst;
}

}  // namespace ltx
