#pragma once

#include <string>
#include <vector>

#include "ltx/train.hpp"

namespace ltx {

// Where a task's data comes from: the in-process synthetic generator, or a
// directory holding train.ltds / val.ltds / test.ltds.
struct TaskSource {
  enum class Kind { synthetic, files };
  Kind kind = Kind::synthetic;
  SynthSpec synth{};
  uint64_t synth_seed = 1;  // data seed, deliberately independent of run seeds
  std::string dir;
  bool augment = true;
};

TaskSpec load_task(const TaskSource& src);
std::string task_source_label(const TaskSource& src);

// One full transfer experiment: source training, mask schedule, and the
// (density level x reset mode x seed) fine-tuning grid plus its dense
// baseline.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string arch = "micro-resnet";
  TaskSource source, target;
  PruneSchedule schedule;
  std::vector<ResetMode::Kind> reset_modes{ResetMode::Kind::late};
  FreezePolicy freeze;
  HeadSpec head{HeadSpec::Kind::linear, 0};
  bool replace_head = true;
  Hyperparams source_hyper, target_hyper;
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  InitDist dist{};

  ExperimentConfig() {
    source_hyper.total_steps = 4000;
    target_hyper.total_steps = 2000;
  }
};

void validate_config(const ExperimentConfig& cfg);

// One target-task training run: either a (density, mode) cell or the dense
// baseline (round < 0). Everything the report CSV needs, one row per run.
struct RunRow {
  std::string arch, source, target;
  std::string schedule_mode;  // "iterative" | "one-shot"
  double density_prunable = 1.0;
  double density_whole = 1.0;
  std::string reset_mode;  // "late" | "ticket" | "random" | "at-step"
  std::string freeze;      // "none" | "freeze-conv"
  uint64_t seed = 0;
  int64_t best_step = 0;
  double best_val_loss = 0.0;
  double test_accuracy = 0.0;
  bool is_winning_ticket = false;
  int64_t wall_ms = 0;
  int round = -1;  // schedule round the masks came from; -1 = dense baseline
  bool divergent = false;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunRow> rows;
};

// The density ladder a schedule produces from trained weights. Iterative
// schedules yield one level per round (rounds=0: the single dense level);
// one-shot schedules yield exactly one level at the target density.
struct MaskLevel {
  int round = 0;
  MaskSet masks;
  double density_prunable = 1.0;
  double density_whole = 1.0;
};

template <typename T>
std::vector<MaskLevel> schedule_levels(const ParameterSet<T>& theta,
                                       const PruneSchedule& schedule) {
  std::vector<MaskLevel> out;
  MaskSet masks = ones_like(theta);
  auto push = [&](int round) {
    out.push_back({round, masks, prunable_density(masks),
                   whole_model_density(masks, theta)});
  };
  if (schedule.mode == PruneSchedule::Mode::iterative) {
    if (schedule.rounds == 0) push(0);
    for (int r = 1; r <= schedule.rounds; ++r) {
      masks = prune_round(theta, masks, schedule);
      push(r);
    }
  } else {
    masks = one_shot_prune(theta, masks, schedule.target_density,
                           schedule.global_ranking);
    push(1);
  }
  return out;
}

// Runs the three-step pipeline, caching into out_dir: source trajectories
// land in out_dir/s<seed>/source, finished rows append to out_dir/rows.csv,
// and a re-run with the same config resumes from both. `workers` parallelizes
// across grid cells; each cell stays single-threaded and seed-deterministic.
ExperimentResult ticket_transfer(const ExperimentConfig& cfg,
                                 const std::string& out_dir, int workers = 1);

// Conjecture check for one cell against the same-seed dense baseline:
// best_step <= baseline.best_step AND test_accuracy >= baseline's.
bool winning_ticket_test(const ExperimentResult& result, double density,
                         ResetMode::Kind mode, uint64_t seed);

// The same two clauses applied to per-cell medians across seeds.
bool winning_ticket_test_median(const ExperimentResult& result, double density,
                                ResetMode::Kind mode);

namespace detail {

// Baseline row for a seed; throws if missing.
const RunRow& baseline_row(const ExperimentResult& result, uint64_t seed);
double median(std::vector<double> v);

}  // namespace detail

}  // namespace ltx
