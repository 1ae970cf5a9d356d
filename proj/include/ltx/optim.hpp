#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ltx/network.hpp"
#include "ltx/params.hpp"
#include "ltx/pruning.hpp"

namespace ltx {

// Piecewise-constant learning rate: the entry with the largest step <= the
// query applies. First entry must sit at step 0.
struct LrSchedule {
  std::vector<std::pair<int64_t, double>> points;

  void validate() const {
    if (points.empty()) throw config_error("empty learning-rate schedule");
    if (points.front().first != 0)
      throw config_error("learning-rate schedule must start at step 0");
    for (size_t i = 0; i < points.size(); ++i) {
      if (points[i].second <= 0.0)
        throw config_error("learning rate must be positive");
      if (i > 0 && points[i].first <= points[i - 1].first)
        throw config_error("learning-rate schedule steps must increase");
    }
  }

  double at(int64_t step) const {
    double lr = points.front().second;
    for (const auto& [s, v] : points) {
      if (s > step) break;
      lr = v;
    }
    return lr;
  }
};

// Drops at 50% and 75% of the budget, scaled-down classic three-step decay.
inline LrSchedule make_step_schedule(int64_t total_steps, double lr0 = 5e-3,
                                     double lr1 = 1e-3, double lr2 = 1e-4) {
  LrSchedule s;
  s.points.push_back({0, lr0});
  if (total_steps >= 4) {
    s.points.push_back({total_steps / 2, lr1});
    s.points.push_back({(3 * total_steps) / 4, lr2});
  }
  s.validate();
  return s;
}

struct Hyperparams {
  LrSchedule lr;  // empty: make_step_schedule(total_steps)
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t batch_size = 32;
  int64_t total_steps = 2000;
  int64_t eval_interval = 100;
  // Checkpoints land every Nth evaluation (plus step 0 and the final step);
  // the report's best step only considers recordable evaluations so the
  // best checkpoint is always retrievable.
  int64_t checkpoint_every_evals = 1;
  int64_t eval_batch = 128;

  void validate() const {
    if (momentum < 0.0 || momentum >= 1.0)
      throw config_error("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw config_error("weight decay must be >= 0");
    if (batch_size < 1) throw config_error("batch size must be >= 1");
    if (total_steps < 0) throw config_error("total steps must be >= 0");
    if (eval_interval < 1) throw config_error("eval interval must be >= 1");
    if (checkpoint_every_evals < 1)
      throw config_error("checkpoint cadence must be >= 1");
    if (eval_batch < 1) throw config_error("eval batch must be >= 1");
    if (!lr.points.empty()) lr.validate();
  }
};

// SGD with classic momentum: v = mu*v + (g + wd*w); w -= lr*v. Weight decay
// touches conv/dense weight kernels only (never biases or batchnorm).
// Masked coordinates get no update and their velocity pins at zero, so a
// pruned weight stays exactly 0 through any number of steps. Frozen tensors
// are skipped entirely.
template <typename T>
struct SgdState {
  ParameterSet<T> velocity;
};

template <typename T>
void sgd_step(ParameterSet<T>& params, const ParameterSet<T>& grads,
              SgdState<T>& state, double lr, double momentum,
              double weight_decay, const MaskSet& masks,
              const FrozenSet& frozen) {
  const auto mu = static_cast<T>(momentum);
  const auto eta = static_cast<T>(lr);
  for (size_t ei = 0; ei < params.entries().size(); ++ei) {
    auto& e = params.entries()[ei];
    if (!e.flags.trainable) continue;
    if (frozen.count(e.name)) continue;
    const bool decayed = e.flags.role == TensorRole::conv_weight ||
                         e.flags.role == TensorRole::dense_weight;
    const auto wd = decayed ? static_cast<T>(weight_decay) : T{};
    const Tensor<T>& g = grads.entries()[ei].value;
    Tensor<T>& v = state.velocity.entries()[ei].value;
    Tensor<T>& w = e.value;
    const Mask* mask = masks.has(e.name) ? &masks.at(e.name) : nullptr;
    for (int64_t i = 0; i < w.numel(); ++i) {
      if (mask && !mask->data()[i]) continue;  // velocity already zero
      const T grad = g.data()[i] + wd * w.data()[i];
      v.data()[i] = mu * v.data()[i] + grad;
      w.data()[i] -= eta * v.data()[i];
    }
  }
}

}  // namespace ltx
