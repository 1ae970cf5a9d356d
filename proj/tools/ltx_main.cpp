// Command-line front end: train / transfer / prune / baseline / report /
// gen-data / verify. Exit codes: 0 success, 2 configuration error, 3 numeric
// divergence, 4 I/O error (1 is reserved for unexpected internal failures).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ltx/config.hpp"
#include "ltx/report.hpp"
#include "ltx/serial.hpp"
#include "ltx/text.hpp"
#include "ltx/transfer.hpp"

namespace fs = std::filesystem;
using namespace ltx;

namespace {

constexpr int kExitInternal = 1;  // unexpected failure; pinned codes in ExitCode

void write_train_report(const std::string& path, const std::string& kind,
                        const std::string& arch, const std::string& task,
                        uint64_t seed, bool f64, const TrainReport& r) {
  serial::atomic_write_file(path, [&](std::ostream& out) {
    out << "kind = " << kind << "\n"
        << "arch = " << arch << "\n"
        << "task = " << task << "\n"
        << "seed = " << seed << "\n"
        << "precision = " << (f64 ? "f64" : "f32") << "\n"
        << "best_step = " << r.best_step << "\n"
        << "best_val_loss = " << text::fmt_float(r.best_val_loss) << "\n"
        << "test_accuracy = " << text::fmt_float(r.test_accuracy) << "\n"
        << "final_density = " << text::fmt_float(r.final_density) << "\n"
        << "steps_to_best = " << r.steps_to_best << "\n"
        << "wall_ms = " << r.wall_ms << "\n"
        << "divergent = " << (r.divergent ? "true" : "false") << "\n"
        << "divergence_step = " << r.divergence_step << "\n";
  });
}

void print_report_line(const std::string& label, const TrainReport& r) {
  std::cout << label << ": best_step=" << r.best_step
            << " best_val_loss=" << text::fmt_float(r.best_val_loss)
            << " test_accuracy=" << text::fmt_float(r.test_accuracy)
            << " wall_ms=" << r.wall_ms
            << (r.divergent ? " DIVERGENT" : "") << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string task_name = "source";
  std::string out_dir = "out/train";
  std::string masks_path;
  uint64_t seed = 1;
  bool f64 = false;
};

template <typename T>
int train_typed(const TrainArgs& args, const ExperimentConfig& cfg,
                const TaskSpec& task, const Hyperparams& hyper) {
  const Architecture arch = make_preset(
      cfg.arch, {task.train.channels(), task.train.height(), task.train.width()},
      task.num_classes);
  auto params = init_params<T>(
      arch, cfg.dist, Rng(args.seed).child(args.task_name + "-init").seed());
  MaskSet masks = args.masks_path.empty() ? ones_like(params)
                                          : load_masks(args.masks_path);

  fs::create_directories(args.out_dir);
  TrajectoryStore store(args.out_dir + "/trajectory");
  if (!store.empty())
    throw config_error(args.out_dir +
                       "/trajectory already holds a run; choose a fresh "
                       "--out-dir");
  auto outcome = train_model<T>(
      arch, std::move(params), masks, cfg.freeze, task, hyper,
      Rng(args.seed).child(args.task_name + "-train").seed(), &store);

  save_checkpoint(args.out_dir + "/best.ltck", outcome.best_params);
  save_checkpoint(args.out_dir + "/final.ltck", outcome.final_params);
  write_train_report(args.out_dir + "/report.txt", "train", cfg.arch,
                     task.name, args.seed, args.f64, outcome.report);
  print_report_line("train " + task.name, outcome.report);
  return outcome.report.divergent ? exit_divergence : exit_ok;
}

int run_train(const TrainArgs& args) {
  const ExperimentConfig cfg = load_experiment_config(args.config_path);
  const bool use_source = args.task_name == "source";
  const TaskSpec task = load_task(use_source ? cfg.source : cfg.target);
  const Hyperparams& hyper =
      use_source ? cfg.source_hyper : cfg.target_hyper;
  return args.f64 ? train_typed<double>(args, cfg, task, hyper)
                  : train_typed<float>(args, cfg, task, hyper);
}

// ---------------------------------------------------------------------------
// transfer

struct TransferArgs {
  std::string config_path;
  std::string out_dir = "out/transfer";
  std::vector<uint64_t> seeds;  // optional override of the config's list
  int workers = 1;
};

int run_transfer(const TransferArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  const ExperimentResult result =
      ticket_transfer(cfg, args.out_dir, args.workers);
  emit_report(result, args.out_dir);

  int divergent = 0;
  for (const auto& r : result.rows)
    if (r.divergent) ++divergent;
  if (divergent)
    std::cerr << "warning: " << divergent
              << " cell(s) diverged; rows are flagged in the report\n";
  std::cout << "transfer " << cfg.name << ": " << result.rows.size()
            << " rows -> " << args.out_dir << "/report.csv\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// prune

struct PruneArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_path = "masks.ltmk";
  int round = -1;  // -1: the schedule's last level
  bool f64 = false;
};

template <typename T>
int prune_typed(const PruneArgs& args, const ExperimentConfig& cfg) {
  const TaskSpec task = load_task(cfg.source);
  const Architecture arch = make_preset(
      cfg.arch, {task.train.channels(), task.train.height(), task.train.width()},
      task.num_classes);
  const auto params =
      load_checkpoint<T>(args.checkpoint_path, param_layout(arch));
  const auto levels = schedule_levels(params, cfg.schedule);

  const MaskLevel* chosen = &levels.back();
  for (const auto& level : levels) {
    std::cout << "round " << level.round
              << ": density_prunable=" << text::fmt_float(level.density_prunable)
              << " density_whole=" << text::fmt_float(level.density_whole)
              << "\n";
    if (level.round == args.round) chosen = &level;
  }
  if (args.round >= 0 && chosen->round != args.round)
    throw config_error("schedule has no round " + std::to_string(args.round));
  save_masks(args.out_path, chosen->masks);
  std::cout << "wrote round " << chosen->round << " masks -> " << args.out_path
            << "\n";
  return exit_ok;
}

int run_prune(const PruneArgs& args) {
  const ExperimentConfig cfg = load_experiment_config(args.config_path);
  return args.f64 ? prune_typed<double>(args, cfg)
                  : prune_typed<float>(args, cfg);
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
  std::string config_path;
  std::string kind = "logistic";
  std::string out_dir = "out/baseline";
  int64_t hidden = 96;
  uint64_t seed = 1;
  bool f64 = false;
};

template <typename T>
int baseline_typed(const BaselineArgs& args, const ExperimentConfig& cfg) {
  const TaskSpec task = load_task(cfg.target);
  const BaselineKind kind =
      args.kind == "logistic" ? BaselineKind::logistic : BaselineKind::fc2;
  auto outcome =
      baseline_run<T>(kind, task, cfg.target_hyper, args.hidden, args.seed);
  fs::create_directories(args.out_dir);
  save_checkpoint(args.out_dir + "/best.ltck", outcome.best_params);
  write_train_report(args.out_dir + "/report.txt", args.kind,
                     baseline_kind_name(kind), task.name, args.seed, args.f64,
                     outcome.report);
  print_report_line(args.kind, outcome.report);
  return outcome.report.divergent ? exit_divergence : exit_ok;
}

int run_baseline(const BaselineArgs& args) {
  const ExperimentConfig cfg = load_experiment_config(args.config_path);
  return args.f64 ? baseline_typed<double>(args, cfg)
                  : baseline_typed<float>(args, cfg);
}

// ---------------------------------------------------------------------------
// report

int run_report(const std::vector<std::string>& inputs,
               const std::string& out_dir) {
  fs::create_directories(out_dir);
  merge_reports(inputs, out_dir);
  const auto merged = read_report_csv(out_dir + "/report.csv");
  std::cout << "merged " << inputs.size() << " report(s), " << merged.size()
            << " unique rows -> " << out_dir << "/report.csv\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string out_dir = "out/data";
  SynthSpec spec;
  uint64_t seed = 1;
};

int run_gen_data(const GenDataArgs& args) {
  const TaskSpec task = generate_synthetic(args.spec, args.seed);
  fs::create_directories(args.out_dir);
  save_dataset(args.out_dir + "/train.ltds", task.train);
  save_dataset(args.out_dir + "/val.ltds", task.val);
  save_dataset(args.out_dir + "/test.ltds", task.test);
  std::cout << task.name << ": train=" << task.train.size()
            << " val=" << task.val.size() << " test=" << task.test.size()
            << " -> " << args.out_dir << "\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// verify

void verify_checkpoint_file(const std::string& path) {
  auto is = serial::open_input(path);
  serial::expect_magic(is, "LTCK", "checkpoint");
  const auto version = serial::read_le<uint16_t>(is, "checkpoint version");
  if (version != 1)
    throw io_error(io_error::Kind::bad_version,
                   path + ": unsupported checkpoint version " +
                       std::to_string(version));
  const auto count = serial::read_le<uint32_t>(is, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const auto name = serial::read_string(is, "tensor name");
    if (name.empty())
      throw io_error(io_error::Kind::bad_value, path + ": empty tensor name");
    const auto dtype = serial::read_le<uint8_t>(is, "dtype");
    if (dtype > 1)
      throw io_error(io_error::Kind::bad_value,
                     path + ": unknown dtype for " + name);
    const auto rank = serial::read_le<uint8_t>(is, "rank");
    int64_t numel = 1;
    for (uint8_t r = 0; r < rank; ++r)
      numel *= serial::read_le<uint32_t>(is, "extent");
    const auto bytes =
        static_cast<std::streamsize>(numel) * (dtype == 0 ? 4 : 8);
    is.ignore(bytes);
    if (is.gcount() != bytes)
      throw io_error(io_error::Kind::truncated,
                     path + ": payload of " + name + " cut short");
  }
  if (is.peek() != EOF)
    throw io_error(io_error::Kind::bad_value,
                   path + ": trailing bytes after last tensor");
}

void verify_masks_file(const std::string& path) {
  const MaskSet masks = load_masks(path);
  for (const auto& e : masks.entries())
    if (ones_count(e.mask) == 0)
      throw io_error(io_error::Kind::bad_value,
                     path + ": layer " + e.name + " is fully pruned");
}

void verify_report_file(const std::string& path) {
  const auto rows = read_report_csv(path);
  // Winning-ticket flags must agree with the conjecture clauses against the
  // same-seed dense baseline whenever that baseline is present.
  std::map<std::tuple<std::string, std::string, std::string, std::string,
                      std::string, uint64_t>,
           const RunRow*>
      baselines;
  auto group_of = [](const RunRow& r) {
    return std::make_tuple(r.arch, r.source, r.target, r.schedule_mode,
                           r.freeze, r.seed);
  };
  for (const auto& r : rows)
    if (r.density_prunable == 1.0 && r.reset_mode == "late")
      baselines[group_of(r)] = &r;
  for (const auto& r : rows) {
    const auto it = baselines.find(group_of(r));
    if (it == baselines.end()) continue;
    const RunRow& base = *it->second;
    const bool expect = r.best_step <= base.best_step &&
                        r.test_accuracy >= base.test_accuracy;
    if (r.is_winning_ticket != expect)
      throw io_error(io_error::Kind::bad_value,
                     path + ": is_winning_ticket inconsistent for seed " +
                         std::to_string(r.seed) + " at density " +
                         text::fmt_float(r.density_prunable));
  }
}

void verify_trajectory_dir(const std::string& dir) {
  if (!fs::exists(dir + "/manifest.txt"))
    throw io_error(io_error::Kind::not_found, dir + ": no manifest.txt");
  const TrajectoryStore store(dir);  // validates ordering and step 0
  for (const auto& rec : store.records()) {
    if (!std::isfinite(rec.val_loss))
      throw io_error(io_error::Kind::bad_value,
                     dir + ": non-finite loss at step " +
                         std::to_string(rec.step));
    verify_checkpoint_file(dir + "/" + rec.filename);
  }
}

// Routes one path to its checker by extension (or directory layout) and
// returns a short label for the OK line.
std::string verify_artifact(const std::string& path) {
  if (fs::is_directory(path)) {
    verify_trajectory_dir(path);
    return "trajectory";
  }
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".ltds") {
    validate_dataset(load_dataset(path), "dataset");
    return "dataset";
  }
  if (ext == ".ltmk") {
    verify_masks_file(path);
    return "masks";
  }
  if (ext == ".ltck") {
    verify_checkpoint_file(path);
    return "checkpoint";
  }
  if (ext == ".csv") {
    verify_report_file(path);
    return "report";
  }
  if (ext == ".cfg" || ext == ".ini" || ext == ".conf") {
    validate_config(load_experiment_config(path));
    return "config";
  }
  throw config_error("don't know how to verify " + path +
                     " (expected .ltds/.ltmk/.ltck/.csv/.cfg or a trajectory "
                     "directory)");
}

int run_verify(const std::vector<std::string>& paths) {
  bool all_ok = true;
  int first_fail = exit_ok;
  for (const auto& path : paths) {
    try {
      const std::string what = verify_artifact(path);
      std::cout << "OK   " << path << " (" << what << ")\n";
    } catch (const std::exception& e) {
      all_ok = false;
      std::cout << "FAIL " << path << ": " << e.what() << "\n";
      if (first_fail == exit_ok) {
        if (dynamic_cast<const config_error*>(&e)) first_fail = exit_config;
        else if (dynamic_cast<const numeric_error*>(&e)) first_fail = exit_divergence;
        else first_fail = exit_io;
      }
    }
  }
  return all_ok ? exit_ok : first_fail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ltx: winning-ticket transfer experiments on deterministic desk-scale "
      "networks"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Train one network and record a trajectory");
  train_cmd->add_option("--config", train_args.config_path, "Experiment file")
      ->required();
  train_cmd->add_option("--task", train_args.task_name, "source or target")
      ->check(CLI::IsMember({"source", "target"}));
  train_cmd->add_option("--seed", train_args.seed, "Run seed");
  train_cmd->add_option("--out-dir", train_args.out_dir, "Output directory");
  train_cmd->add_option("--masks", train_args.masks_path,
                        "Apply a saved mask file for sparse training");
  train_cmd->add_flag("--f64", train_args.f64, "Double precision");

  TransferArgs transfer_args;
  auto* transfer_cmd = app.add_subcommand(
      "transfer", "Run the full source->prune->reset->target pipeline");
  transfer_cmd
      ->add_option("--config", transfer_args.config_path, "Experiment file")
      ->required();
  transfer_cmd->add_option("--out-dir", transfer_args.out_dir,
                           "Output directory");
  transfer_cmd->add_option("--workers", transfer_args.workers,
                           "Parallel cells")
      ->check(CLI::PositiveNumber);
  transfer_cmd->add_option("--seed", transfer_args.seeds,
                           "Override the config's seed list (repeatable)");

  PruneArgs prune_args;
  auto* prune_cmd = app.add_subcommand(
      "prune", "Compute magnitude-pruning masks from a checkpoint");
  prune_cmd->add_option("--config", prune_args.config_path, "Experiment file")
      ->required();
  prune_cmd
      ->add_option("--checkpoint", prune_args.checkpoint_path,
                   "Trained weights (.ltck)")
      ->required();
  prune_cmd->add_option("--out", prune_args.out_path, "Mask file to write");
  prune_cmd->add_option("--round", prune_args.round,
                        "Schedule round to save (default: last)");
  prune_cmd->add_flag("--f64", prune_args.f64, "Checkpoint is f64");

  BaselineArgs baseline_args;
  auto* baseline_cmd = app.add_subcommand(
      "baseline", "Train a flat classifier on the target task");
  baseline_cmd
      ->add_option("--config", baseline_args.config_path, "Experiment file")
      ->required();
  baseline_cmd->add_option("--kind", baseline_args.kind, "logistic or fc2")
      ->check(CLI::IsMember({"logistic", "fc2"}));
  baseline_cmd->add_option("--hidden", baseline_args.hidden,
                           "fc2 hidden width");
  baseline_cmd->add_option("--seed", baseline_args.seed, "Run seed");
  baseline_cmd->add_option("--out-dir", baseline_args.out_dir,
                           "Output directory");
  baseline_cmd->add_flag("--f64", baseline_args.f64, "Double precision");

  std::vector<std::string> report_inputs;
  std::string report_out_dir = "out/report";
  auto* report_cmd =
      app.add_subcommand("report", "Merge run CSVs and summarize medians");
  report_cmd->add_option("inputs", report_inputs, "Input report.csv files")
      ->required();
  report_cmd->add_option("--out-dir", report_out_dir, "Output directory");

  GenDataArgs gen_args;
  auto* gen_cmd =
      app.add_subcommand("gen-data", "Write a synthetic dataset as LTDS files");
  gen_cmd->add_option("--out-dir", gen_args.out_dir, "Output directory");
  gen_cmd->add_option("--classes", gen_args.spec.num_classes, "Class count");
  gen_cmd->add_option("--channels", gen_args.spec.channels, "Channels");
  gen_cmd->add_option("--height", gen_args.spec.height, "Image height");
  gen_cmd->add_option("--width", gen_args.spec.width, "Image width");
  gen_cmd->add_option("--per-class", gen_args.spec.train_per_class,
                      "Train samples per class");
  gen_cmd->add_option("--val-per-class", gen_args.spec.val_per_class,
                      "Val samples per class (0: train/8)");
  gen_cmd->add_option("--test-per-class", gen_args.spec.test_per_class,
                      "Test samples per class (0: train/4)");
  gen_cmd->add_option("--noise", gen_args.spec.noise, "Noise level >= 0");
  gen_cmd->add_option("--seed", gen_args.seed, "Data seed");

  std::vector<std::string> verify_paths;
  auto* verify_cmd = app.add_subcommand(
      "verify", "Check artifact files against their format invariants");
  verify_cmd->add_option("paths", verify_paths, "Artifacts to check")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*transfer_cmd) return run_transfer(transfer_args);
    if (*prune_cmd) return run_prune(prune_args);
    if (*baseline_cmd) return run_baseline(baseline_args);
    if (*report_cmd) return run_report(report_inputs, report_out_dir);
    if (*gen_cmd) return run_gen_data(gen_args);
    if (*verify_cmd) return run_verify(verify_paths);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return exit_divergence;
  } catch (const io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return exit_io;
  } catch (const contract_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;  // unreachable: a subcommand is required
}
