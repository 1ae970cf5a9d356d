#pragma once

#include <cmath>
#include <cstdint>

#include "ltx/architecture.hpp"
#include "ltx/params.hpp"
#include "ltx/rng.hpp"

namespace ltx {

// The initialization distribution for fresh parameters. The default is
// fan-in-scaled uniform with bound sqrt(6 / fan_in) for dense and conv
// weights; biases are zero, batchnorm starts at gamma=1, beta=0 with running
// stats (0, 1).
struct InitDist {
  enum class Kind { fan_in_uniform, fan_in_normal };
  Kind kind = Kind::fan_in_uniform;
};

namespace detail {

inline int64_t fan_in_of(const ParamDecl& d) {
  if (d.flags.role == TensorRole::conv_weight)
    return d.shape[1] * d.shape[2] * d.shape[3];
  return d.shape[1];  // dense weight (out, in)
}

}  // namespace detail

// Deterministic: equal (arch, dist, seed) produce bit-identical parameters.
// Each tensor draws from its own stream keyed by name, so layout changes in
// one layer never shift another layer's values.
template <typename T>
ParameterSet<T> init_params(const Architecture& arch, const InitDist& dist,
                            uint64_t seed) {
  validate_architecture(arch);
  ParameterSet<T> params;
  const Rng root(seed);
  for (const auto& d : param_layout(arch)) {
    Tensor<T> t(d.shape);
    switch (d.flags.role) {
      case TensorRole::conv_weight:
      case TensorRole::dense_weight: {
        Rng stream = root.child(d.name);
        const double fan_in = static_cast<double>(detail::fan_in_of(d));
        if (dist.kind == InitDist::Kind::fan_in_uniform) {
          const double bound = std::sqrt(6.0 / fan_in);
          for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<T>(stream.uniform(-bound, bound));
        } else {
          const double sigma = std::sqrt(2.0 / fan_in);
          for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<T>(sigma * stream.normal());
        }
        break;
      }
      case TensorRole::bn_gamma:
      case TensorRole::bn_running_var:
        t.fill(T{1});
        break;
      default:
        break;  // biases, bn beta, running mean: zero
    }
    params.add(d.name, std::move(t), d.flags);
  }
  return params;
}

// Swaps in a freshly initialized head for `num_classes` outputs. Body tensors
// are preserved bit-exactly; the new head is never prunable.
template <typename T>
std::pair<Architecture, ParameterSet<T>> replace_head(
    const Architecture& arch, const ParameterSet<T>& params,
    const HeadSpec& spec, int64_t num_classes, uint64_t seed,
    const InitDist& dist = {}) {
  Architecture out = arch;
  out.num_classes = num_classes;
  out.head = make_head(spec, head_input_dim(arch), num_classes);
  validate_architecture(out);

  // Head draws come from a stream distinct from init_params' streams, so a
  // replacement head is re-randomized even under the original init seed.
  ParameterSet<T> fresh =
      init_params<T>(out, dist, Rng(seed).child("replace-head").seed());
  ParameterSet<T> result;
  for (auto& e : fresh.entries()) {
    if (params.has(e.name) && !e.name.starts_with("head.")) {
      const auto& src = params.entry(e.name);
      require_same_shape(src.value, e.value, "replace_head");
      result.add(e.name, src.value, src.flags);
    } else {
      result.add(e.name, std::move(e.value), e.flags);
    }
  }
  return {std::move(out), std::move(result)};
}

}  // namespace ltx
