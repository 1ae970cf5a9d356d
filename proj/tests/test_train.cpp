#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "ltx/train.hpp"

using namespace ltx;

namespace {

TaskSpec easy_task(int64_t classes, double noise, int64_t per_class,
                   uint64_t seed, int64_t channels = 1, int64_t side = 8) {
  SynthSpec spec;
  spec.num_classes = classes;
  spec.channels = channels;
  spec.height = side;
  spec.width = side;
  spec.train_per_class = per_class;
  spec.noise = noise;
  auto task = generate_synthetic(spec, seed);
  task.augment = false;  // keep the unit runs cheap and exactly analyzable
  return task;
}

Hyperparams quick_hyper(int64_t steps, int64_t batch) {
  Hyperparams h;
  h.total_steps = steps;
  h.batch_size = batch;
  h.eval_interval = std::max<int64_t>(1, steps / 4);
  return h;
}

}  // namespace

TEST_CASE("the default schedule drops the rate at the half and 3/4 marks") {
  const auto lr = make_step_schedule(2000);
  CHECK(lr.at(0) == 5e-3);
  CHECK(lr.at(999) == 5e-3);
  CHECK(lr.at(1000) == 1e-3);
  CHECK(lr.at(1499) == 1e-3);
  CHECK(lr.at(1500) == 1e-4);
  CHECK(lr.at(1999) == 1e-4);

  // Too short to fit three segments: constant rate.
  const auto tiny = make_step_schedule(3);
  CHECK(tiny.at(0) == 5e-3);
  CHECK(tiny.at(2) == 5e-3);
}

TEST_CASE("schedule validation rejects malformed point lists") {
  LrSchedule s;
  s.points = {{10, 1e-3}};
  CHECK_THROWS_AS(s.validate(), config_error);  // must start at step 0
  s.points = {{0, 1e-3}, {5, 1e-4}, {5, 1e-5}};
  CHECK_THROWS_AS(s.validate(), config_error);  // strictly increasing
  s.points = {{0, 0.0}};
  CHECK_THROWS_AS(s.validate(), config_error);  // positive rates
  s.points = {{0, 1e-2}, {7, 2e-2}};
  s.validate();
  CHECK(s.at(6) == 1e-2);
  CHECK(s.at(7) == 2e-2);
  CHECK(s.at(10000) == 2e-2);
}

TEST_CASE("hyperparameter validation") {
  Hyperparams h;
  h.validate();
  h.batch_size = 0;
  CHECK_THROWS_AS(h.validate(), config_error);
  h = {};
  h.total_steps = -1;
  CHECK_THROWS_AS(h.validate(), config_error);
  h = {};
  h.eval_interval = 0;
  CHECK_THROWS_AS(h.validate(), config_error);
  h = {};
  h.momentum = -0.1;
  CHECK_THROWS_AS(h.validate(), config_error);
}

TEST_CASE("one SGD step matches the momentum arithmetic by hand") {
  ParameterSet<float> params;
  params.add("w.weight", Tensor<float>::from({2}, {1.0f, 2.0f}),
             {TensorRole::dense_weight, true, true});
  params.add("w.bias", Tensor<float>::from({1}, {0.5f}),
             {TensorRole::bias, true, false});
  ParameterSet<float> grads = params.zeros_like();
  grads.at("w.weight").data()[0] = 0.3f;
  grads.at("w.weight").data()[1] = -0.2f;
  grads.at("w.bias").data()[0] = 0.1f;

  MaskSet masks;
  masks.add("w.weight", Tensor<uint8_t>::from({2}, {1, 0}));

  SgdState<float> sgd{params.zeros_like()};

  sgd_step(params, grads, sgd, 0.1, 0.9, 1e-4, masks, {});
  // Weight 0: v = 0.3 + 1e-4*1.0; w = 1.0 - 0.1*v.
  const double v0 = 0.3 + 1e-4 * 1.0;
  CHECK(params.at("w.weight").data()[0] ==
        doctest::Approx(1.0 - 0.1 * v0).epsilon(1e-6));
  // Weight 1 is masked: untouched value, zero velocity.
  CHECK(params.at("w.weight").data()[1] == 2.0f);
  CHECK(sgd.velocity.at("w.weight").data()[1] == 0.0f);
  // Bias updates without weight decay.
  CHECK(params.at("w.bias").data()[0] ==
        doctest::Approx(0.5 - 0.1 * 0.1).epsilon(1e-6));

  // Second step folds the momentum buffer in.
  const float w0 = params.at("w.weight").data()[0];
  sgd_step(params, grads, sgd, 0.1, 0.9, 1e-4, masks, {});
  const double v1 = 0.9 * v0 + (0.3 + 1e-4 * w0);
  CHECK(params.at("w.weight").data()[0] ==
        doctest::Approx(w0 - 0.1 * v1).epsilon(1e-6));

  // Frozen tensors are skipped wholesale.
  FrozenSet frozen{"w.weight"};
  const float before = params.at("w.weight").data()[0];
  sgd_step(params, grads, sgd, 0.1, 0.9, 1e-4, masks, frozen);
  CHECK(params.at("w.weight").data()[0] == before);
}

TEST_CASE("batch iteration reshuffles per epoch and stays deterministic") {
  BatchIterator it(10, 4, 42);
  std::vector<int64_t> epoch0;
  const auto b0 = it.next();
  epoch0.insert(epoch0.end(), b0.begin(), b0.end());
  const auto b1 = it.next();
  epoch0.insert(epoch0.end(), b1.begin(), b1.end());
  CHECK(std::set<int64_t>(epoch0.begin(), epoch0.end()).size() == 8);
  for (int64_t v : epoch0) CHECK((0 <= v && v < 10));
  CHECK(it.epoch() == 0);
  it.next();  // only 2 indices remain: fresh epoch, full batch
  CHECK(it.epoch() == 1);

  BatchIterator same(10, 4, 42);
  const auto s0 = same.next();
  CHECK(std::equal(s0.begin(), s0.end(), epoch0.begin()));

  // Batch size clamps to the dataset.
  BatchIterator tiny(3, 8, 1);
  CHECK(tiny.next().size() == 3);
  CHECK_THROWS_AS(BatchIterator(0, 4, 1), contract_error);
}

TEST_CASE("zero-step training echoes the masked initialization") {
  const auto task = easy_task(3, 0.2, 8, 5);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 3);
  auto params = init_params<float>(arch, {}, 7);
  PruneSchedule sched;
  sched.dense_rate = 0.3;
  const auto masks = prune_round(params, ones_like(params), sched);

  auto hyper = quick_hyper(0, 8);
  auto out = train_model<float>(arch, params, masks, {}, task, hyper, 1);
  CHECK(out.report.best_step == 0);
  CHECK(out.report.steps_to_best == 0);
  CHECK(bit_equal(out.final_params, apply_mask(params, masks)));
  CHECK(bit_equal(out.best_params, out.final_params));
  CHECK(out.eval_history.size() == 1);
  CHECK_FALSE(out.report.divergent);
}

TEST_CASE("masked coordinates stay exactly zero through training") {
  const auto task = easy_task(3, 0.5, 12, 6);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 3);
  auto params = init_params<float>(arch, {}, 9);
  PruneSchedule sched;
  sched.dense_rate = 0.5;
  const auto masks = prune_round(params, ones_like(params), sched);

  auto out = train_model<float>(arch, params, masks, {}, task,
                                quick_hyper(40, 8), 2);
  int64_t zeros_checked = 0;
  for (const auto& e : masks.entries()) {
    const auto& w = out.final_params.at(e.name);
    for (int64_t i = 0; i < w.numel(); ++i)
      if (!e.mask.data()[i]) {
        CHECK(w.data()[i] == 0.0f);
        ++zeros_checked;
      }
  }
  CHECK(zeros_checked > 0);
  // Survivors did move.
  CHECK_FALSE(bit_equal(out.final_params.at("fc0.weight"),
                        apply_mask(params, masks).at("fc0.weight")));
}

TEST_CASE("freeze-conv keeps every conv and norm tensor bit-identical") {
  const auto task = easy_task(3, 0.5, 8, 16, 3, 8);
  const auto arch = make_preset("micro-vgg", {3, 8, 8}, 3);
  auto params = init_params<float>(arch, {}, 30);
  const auto before = params;  // value copy

  const FreezePolicy freeze{FreezePolicy::Kind::freeze_conv};
  // A zero-step run stops right after preparation (including the one-time
  // batchnorm re-measurement), capturing the state fine-tuning starts from.
  auto prepared = train_model<float>(arch, params, ones_like(params), freeze,
                                     task, quick_hyper(0, 8), 3);
  auto out = train_model<float>(arch, params, ones_like(params), freeze, task,
                                quick_hyper(12, 8), 3);
  const auto frozen = frozen_tensors(freeze, params);
  CHECK(frozen.size() > 0);
  int64_t conv_like = 0;
  bool stats_measured = false;
  for (const auto& e : before.entries()) {
    if (!frozen.count(e.name)) continue;
    ++conv_like;
    // No fine-tuning step may touch a frozen tensor.
    CHECK(bit_equal(out.final_params.at(e.name),
                    prepared.final_params.at(e.name)));
    if (e.flags.role == TensorRole::bn_running_mean ||
        e.flags.role == TensorRole::bn_running_var) {
      // Preparation replaces the inherited statistics with ones measured on
      // this task's activations.
      if (!bit_equal(out.final_params.at(e.name), e.value))
        stats_measured = true;
    } else {
      // Learnable tensors come through preparation untouched.
      CHECK(bit_equal(out.final_params.at(e.name), e.value));
    }
  }
  CHECK(conv_like == static_cast<int64_t>(frozen.size()));
  CHECK(stats_measured);
  // The head still learns.
  CHECK_FALSE(bit_equal(out.final_params.at("head.fc.weight"),
                        before.at("head.fc.weight")));
}

TEST_CASE("training twice from the same seeds replays bit-for-bit") {
  const auto task = easy_task(4, 0.6, 10, 8);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 4);
  auto params = init_params<float>(arch, {}, 11);

  auto a = train_model<float>(arch, params, ones_like(params), {}, task,
                              quick_hyper(30, 8), 21);
  auto b = train_model<float>(arch, params, ones_like(params), {}, task,
                              quick_hyper(30, 8), 21);
  CHECK(a.report.best_step == b.report.best_step);
  CHECK(a.report.best_val_loss == b.report.best_val_loss);
  CHECK(a.report.test_accuracy == b.report.test_accuracy);
  CHECK(a.eval_history == b.eval_history);
  CHECK(bit_equal(a.final_params, b.final_params));
  CHECK(bit_equal(a.best_params, b.best_params));

  auto c = train_model<float>(arch, params, ones_like(params), {}, task,
                              quick_hyper(30, 8), 22);
  CHECK_FALSE(bit_equal(a.final_params, c.final_params));
}

TEST_CASE("training checkpoints into an attached trajectory store") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ltx-train-traj";
  fs::remove_all(dir);

  const auto task = easy_task(3, 0.4, 8, 5);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 3);
  auto params = init_params<float>(arch, {}, 7);
  auto hyper = quick_hyper(20, 8);
  hyper.eval_interval = 10;

  TrajectoryStore store(dir.string());
  auto with = train_model<float>(arch, params, ones_like(params), {}, task,
                                 hyper, 4, &store);
  // Evals at steps 0, 10, 20, all recordable at the default cadence.
  REQUIRE(store.records().size() == 3);
  CHECK(store.has_step(0));
  CHECK(store.has_step(10));
  CHECK(store.has_step(20));
  CHECK(store.best().step == with.report.best_step);
  CHECK(store.best().val_loss == with.report.best_val_loss);
  CHECK(bit_equal(
      store.load_step<float>(with.report.best_step, param_layout(arch)),
      with.best_params));

  // Attaching a store must not perturb the run itself.
  auto without = train_model<float>(arch, params, ones_like(params), {}, task,
                                    hyper, 4);
  CHECK(bit_equal(with.final_params, without.final_params));
  CHECK(with.report.best_val_loss == without.report.best_val_loss);
  fs::remove_all(dir);
}

TEST_CASE("validation loss improves on an easy task") {
  const auto task = easy_task(3, 0.1, 16, 12);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 3);
  auto params = init_params<float>(arch, {}, 13);
  auto out = train_model<float>(arch, params, ones_like(params), {}, task,
                                quick_hyper(60, 8), 14);
  REQUIRE(out.eval_history.size() >= 2);
  CHECK(out.report.best_val_loss < out.eval_history.front().second * 0.8);
  CHECK(out.report.best_step > 0);
}

TEST_CASE("a linear probe saturates a noiseless task") {
  const auto task = easy_task(4, 0.0, 12, 19);
  auto out = baseline_run<float>(BaselineKind::logistic, task,
                                 quick_hyper(120, 12), 0, 3);
  CHECK(out.report.test_accuracy >= 0.99);
}

TEST_CASE("the two-layer probe handles what a linear probe cannot") {
  // High noise with jitter makes raw-pixel linear separation lossy while a
  // hidden layer still fits.
  const auto task = easy_task(4, 0.9, 40, 23);
  auto hyper = quick_hyper(200, 16);
  auto lin = baseline_run<float>(BaselineKind::logistic, task, hyper, 0, 31);
  auto fc2 = baseline_run<float>(BaselineKind::fc2, task, hyper, 128, 31);
  CHECK(fc2.report.test_accuracy >= lin.report.test_accuracy - 0.02);
  CHECK(fc2.report.test_accuracy > 0.5);
}

TEST_CASE("shape and class mismatches are configuration errors") {
  const auto task = easy_task(3, 0.2, 8, 5);
  const auto arch_shape = make_preset("fc-small", {1, 10, 10}, 3);
  auto p1 = init_params<float>(arch_shape, {}, 1);
  CHECK_THROWS_AS(train_model<float>(arch_shape, p1, ones_like(p1), {}, task,
                                     quick_hyper(1, 4), 1),
                  config_error);
  const auto arch_classes = make_preset("fc-small", {1, 8, 8}, 5);
  auto p2 = init_params<float>(arch_classes, {}, 1);
  CHECK_THROWS_AS(train_model<float>(arch_classes, p2, ones_like(p2), {},
                                     task, quick_hyper(1, 4), 1),
                  config_error);
}

TEST_CASE("f64 training runs the same loop at double precision") {
  const auto task = easy_task(3, 0.3, 8, 5);
  const auto arch = make_preset("fc-small", {1, 8, 8}, 3);
  auto params = init_params<double>(arch, {}, 7);
  auto out = train_model<double>(arch, params, ones_like(params), {}, task,
                                 quick_hyper(10, 8), 2);
  CHECK(out.eval_history.size() >= 2);
  CHECK_FALSE(out.report.divergent);
  auto again = train_model<double>(arch, params, ones_like(params), {}, task,
                                   quick_hyper(10, 8), 2);
  CHECK(bit_equal(out.final_params, again.final_params));
}
