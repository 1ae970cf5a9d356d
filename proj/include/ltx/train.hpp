#pragma once

#include <chrono>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ltx/checkpoint.hpp"
#include "ltx/data.hpp"
#include "ltx/network.hpp"
#include "ltx/optim.hpp"
#include "ltx/pruning.hpp"

namespace ltx {

// Upper bound on the number of batches used to re-measure frozen batchnorm
// statistics before fine-tuning. At update momentum 0.1 the inherited stats
// decay to under 0.2% of the mixture within 64 batches.
constexpr int64_t kBnCalibrationBatches = 64;

struct FreezePolicy {
  enum class Kind { none, freeze_conv };
  Kind kind = Kind::none;
};

const char* freeze_policy_name(FreezePolicy::Kind k);
FreezePolicy::Kind freeze_policy_from_name(const std::string& name);

// freeze-conv pins every conv kernel and bias plus all batchnorm tensors
// (affine and running stats); dense layers, wherever they sit, keep training.
template <typename T>
FrozenSet frozen_tensors(const FreezePolicy& policy,
                         const ParameterSet<T>& params) {
  FrozenSet out;
  if (policy.kind == FreezePolicy::Kind::none) return out;
  for (const auto& e : params.entries()) {
    switch (e.flags.role) {
      case TensorRole::conv_weight:
      case TensorRole::bn_gamma:
      case TensorRole::bn_beta:
      case TensorRole::bn_running_mean:
      case TensorRole::bn_running_var:
        out.insert(e.name);
        break;
      case TensorRole::bias: {
        // A bias freezes with its owning layer; conv layers own a
        // conv_weight sibling under the same prefix.
        const std::string sibling =
            e.name.substr(0, e.name.size() - 5) + ".weight";
        if (params.has(sibling) &&
            params.entry(sibling).flags.role == TensorRole::conv_weight)
          out.insert(e.name);
        break;
      }
      default:
        break;
    }
  }
  return out;
}

struct TrainReport {
  int64_t best_step = 0;
  double best_val_loss = 0.0;
  double test_accuracy = 0.0;
  double final_density = 1.0;  // prunable scope; 1.0 when nothing is prunable
  int64_t steps_to_best = 0;   // operationalized as best_step
  int64_t wall_ms = 0;
  bool divergent = false;
  int64_t divergence_step = -1;
};

template <typename T>
struct TrainOutcome {
  TrainReport report;
  ParameterSet<T> final_params;
  ParameterSet<T> best_params;
  std::vector<std::pair<int64_t, double>> eval_history;  // (step, val_loss)
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Full-split evaluation in eval mode, fixed batch order, loss and accuracy
// averaged per image (deterministic accumulation).
template <typename T>
EvalResult evaluate(const Network<T>& net, const ParameterSet<T>& params,
                    const Dataset& data, int64_t eval_batch) {
  RunCtx<T> ctx;
  Tensor<float> fbatch;
  double total_loss = 0.0;
  int64_t correct = 0;
  const int64_t n = data.size();
  std::vector<int64_t> idx;
  for (int64_t start = 0; start < n; start += eval_batch) {
    const int64_t count = std::min(eval_batch, n - start);
    idx.resize(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    data.fill_normalized(idx, fbatch);
    const auto labels = data.gather_labels(idx);
    const Tensor<T>* batch;
    Tensor<T> cast_holder;
    if constexpr (std::is_same_v<T, float>) {
      batch = &fbatch;
    } else {
      cast_holder = fbatch.template cast<T>();
      batch = &cast_holder;
    }
    const auto out = net.forward(params, *batch, labels, Mode::eval, ctx);
    total_loss += out.loss * static_cast<double>(count);
    const int64_t k = out.logits->dim(1);
    for (int64_t i = 0; i < count; ++i) {
      const T* row = out.logits->data() + i * k;
      int64_t arg = 0;
      for (int64_t j = 1; j < k; ++j)
        if (row[j] > row[arg]) arg = j;
      if (arg == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return {total_loss / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

// Epoch-shuffled full batches; each epoch's order comes from the seed and
// the epoch ordinal, so runs replay exactly.
class BatchIterator {
 public:
  BatchIterator(int64_t n, int64_t batch_size, uint64_t seed)
      : n_(n), batch_(std::min(batch_size, n)), seed_(seed) {
    if (n < 1) throw contract_error("cannot iterate an empty dataset");
    reshuffle();
  }

  std::span<const int64_t> next() {
    if (pos_ + batch_ > n_) {
      ++epoch_;
      reshuffle();
    }
    const auto* begin = order_.data() + pos_;
    pos_ += batch_;
    return {begin, static_cast<size_t>(batch_)};
  }

  int64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(static_cast<size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng = Rng(seed_).child("epoch", static_cast<uint64_t>(epoch_));
    for (int64_t i = n_ - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(
          rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
    }
    pos_ = 0;
  }

  int64_t n_, batch_, pos_ = 0, epoch_ = 0;
  uint64_t seed_;
  std::vector<int64_t> order_;
};

// The training loop. Masked coordinates stay exactly zero, frozen tensors
// stay bit-identical, evaluation runs at step 0, every eval_interval, and
// the final step. Divergence (non-finite loss or activation) aborts the run
// and flags the report; metrics then cover the steps before the abort.
// When `store` is given, recordable evaluations checkpoint to it.
template <typename T>
TrainOutcome<T> train_model(const Architecture& arch, ParameterSet<T> params,
                            const MaskSet& masks, const FreezePolicy& freeze,
                            const TaskSpec& task, const Hyperparams& hyper,
                            uint64_t seed, TrajectoryStore* store = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  hyper.validate();
  validate_task(task);
  validate_masks(masks, params);
  if (task.train.channels() != arch.input.c ||
      task.train.height() != arch.input.h ||
      task.train.width() != arch.input.w)
    throw config_error("task shape does not match architecture input");
  if (task.num_classes != arch.num_classes)
    throw config_error("task classes do not match architecture head");

  const LrSchedule lr = hyper.lr.points.empty()
                            ? make_step_schedule(hyper.total_steps)
                            : hyper.lr;
  lr.validate();

  Network<T> net(arch);
  const FrozenSet frozen = frozen_tensors(freeze, params);
  apply_mask_inplace(params, masks);

  TrainOutcome<T> out;
  out.report.final_density = masks.size() ? prunable_density(masks) : 1.0;

  SgdState<T> sgd{params.zeros_like()};
  ParameterSet<T> grads = params.zeros_like();
  RunCtx<T> ctx;
  Tensor<float> fbatch;
  BatchIterator batches(task.train.size(), hyper.batch_size,
                        Rng(seed).child("batches").seed());
  const uint64_t augment_seed = Rng(seed).child("augment").seed();

  // A frozen batchnorm keeps its running statistics pinned for the whole
  // run, but statistics inherited from a source checkpoint describe dense
  // source-task activations — meaningless once most conv weights are masked
  // or swapped. Measure the prepared network on this task's training images
  // once, up front, so frozen evaluation normalizes against honest numbers;
  // fine-tuning itself then never touches them, keeping the freeze contract
  // byte-exact from the first step onward.
  if (!frozen.empty()) {
    bool has_bn = false;
    for (const auto& e : params.entries())
      if (e.flags.role == TensorRole::bn_running_mean) has_bn = true;
    const int64_t n = task.train.size();
    if (has_bn && n > 0) {
      const int64_t bsz = std::min<int64_t>(hyper.batch_size, n);
      const int64_t passes =
          std::min<int64_t>((n + bsz - 1) / bsz, kBnCalibrationBatches);
      std::vector<int64_t> idx(static_cast<size_t>(bsz));
      try {
        for (int64_t b = 0; b < passes; ++b) {
          for (int64_t i = 0; i < bsz; ++i)
            idx[static_cast<size_t>(i)] = (b * bsz + i) % n;
          task.train.fill_normalized(idx, fbatch);
          const auto labels = task.train.gather_labels(idx);
          const Tensor<T>* batch;
          Tensor<T> cast_holder;
          if constexpr (std::is_same_v<T, float>) {
            batch = &fbatch;
          } else {
            cast_holder = fbatch.template cast<T>();
            batch = &cast_holder;
          }
          net.forward(params, *batch, labels, Mode::train, ctx, nullptr);
          net.commit_bn_updates(params, ctx);
        }
      } catch (const numeric_error&) {
        // Stats stay wherever the pass left them; if the network really is
        // numerically broken the training loop will flag it on step 1.
      }
    }
  }

  bool have_best = false;
  int64_t eval_ordinal = 0;

  auto run_eval = [&](int64_t step) {
    const EvalResult val = evaluate(net, params, task.val, hyper.eval_batch);
    out.eval_history.push_back({step, val.loss});
    const bool recordable = step == 0 || step == hyper.total_steps ||
                            eval_ordinal % hyper.checkpoint_every_evals == 0;
    if (recordable) {
      if (!have_best || val.loss < out.report.best_val_loss) {
        have_best = true;
        out.report.best_val_loss = val.loss;
        out.report.best_step = step;
        out.best_params = params;
      }
      if (store) store->record(step, params, val.loss);
    }
    ++eval_ordinal;
  };

  run_eval(0);

  for (int64_t step = 1; step <= hyper.total_steps; ++step) {
    const auto idx = batches.next();
    task.train.fill_normalized(idx, fbatch);
    if (task.augment) {
      Rng arng = Rng(augment_seed).child("step", static_cast<uint64_t>(step));
      augment_inplace(fbatch, arng);
    }
    const auto labels = task.train.gather_labels(idx);
    const Tensor<T>* batch;
    Tensor<T> cast_holder;
    if constexpr (std::is_same_v<T, float>) {
      batch = &fbatch;
    } else {
      cast_holder = fbatch.template cast<T>();
      batch = &cast_holder;
    }
    try {
      net.forward(params, *batch, labels, Mode::train, ctx, &frozen);
      net.commit_bn_updates(params, ctx);
      grads.fill_zero();
      net.backward(params, ctx, grads, &frozen);
      sgd_step(params, grads, sgd, lr.at(step - 1), hyper.momentum,
               hyper.weight_decay, masks, frozen);
      if (step % hyper.eval_interval == 0 || step == hyper.total_steps)
        run_eval(step);
    } catch (const numeric_error&) {
      out.report.divergent = true;
      out.report.divergence_step = step;
      break;
    }
  }

  if (!have_best) {
    // Divergence before any post-step eval: echo the step-0 state.
    out.report.best_step = 0;
    out.report.best_val_loss = out.eval_history.front().second;
    out.best_params = params;
  }
  out.report.steps_to_best = out.report.best_step;
  out.report.test_accuracy =
      evaluate(net, out.best_params, task.test, hyper.eval_batch).accuracy;
  out.final_params = std::move(params);
  out.report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - t_start)
                           .count();
  return out;
}

// §"self-contained flat classifiers": logistic regression and the 2-layer
// head trained from scratch on a task, reported like any other run.
enum class BaselineKind { logistic, fc2 };

const char* baseline_kind_name(BaselineKind k);

template <typename T>
Architecture make_baseline_arch(BaselineKind kind, const TaskSpec& task,
                                int64_t hidden) {
  Architecture a;
  a.name = kind == BaselineKind::logistic ? "logistic" : "fc2";
  a.input = {task.train.channels(), task.train.height(), task.train.width()};
  a.num_classes = task.num_classes;
  a.layers.push_back(flatten_layer("flatten"));
  const int64_t flat = a.input.c * a.input.h * a.input.w;
  a.head = make_head({kind == BaselineKind::logistic ? HeadSpec::Kind::linear
                                                     : HeadSpec::Kind::fc2,
                      hidden},
                     flat, task.num_classes);
  validate_architecture(a);
  return a;
}

template <typename T>
TrainOutcome<T> baseline_run(BaselineKind kind, const TaskSpec& task,
                             const Hyperparams& hyper, int64_t hidden,
                             uint64_t seed) {
  const Architecture arch = make_baseline_arch<T>(kind, task, hidden);
  auto params =
      init_params<T>(arch, {}, Rng(seed).child("baseline-init").seed());
  MaskSet masks = ones_like(params);
  return train_model<T>(arch, std::move(params), masks, FreezePolicy{}, task,
                        hyper, Rng(seed).child("baseline-train").seed());
}

}  // namespace ltx
