#include "ltx/transfer.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "ltx/report.hpp"
#include "ltx/serial.hpp"
#include "ltx/text.hpp"

namespace fs = std::filesystem;

namespace ltx {

TaskSpec load_task(const TaskSource& src) {
  TaskSpec task;
  if (src.kind == TaskSource::Kind::synthetic) {
    task = generate_synthetic(src.synth, src.synth_seed);
  } else {
    task.train = load_dataset(src.dir + "/train.ltds");
    task.val = load_dataset(src.dir + "/val.ltds");
    task.test = load_dataset(src.dir + "/test.ltds");
    task.val.tag = SplitTag::val;
    task.test.tag = SplitTag::test;
    task.num_classes = task.train.num_classes;
    task.name = fs::path(src.dir).filename().string();
    if (task.name.empty()) task.name = src.dir;
  }
  task.augment = src.augment;
  validate_task(task);
  return task;
}

std::string task_source_label(const TaskSource& src) {
  return load_task(src).name;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.name.empty()) throw config_error("experiment name must not be empty");
  for (char c : cfg.name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      throw config_error("experiment name must be [A-Za-z0-9_-]: " + cfg.name);
  if (cfg.seeds.empty()) throw config_error("need at least one seed");
  if (cfg.reset_modes.empty()) throw config_error("need at least one reset mode");
  for (auto m : cfg.reset_modes)
    if (m == ResetMode::Kind::at_step)
      throw config_error(
          "at-step resets are for ad-hoc runs, not experiment grids");
  if (cfg.schedule.mode == PruneSchedule::Mode::iterative) {
    if (cfg.schedule.rounds < 0)
      throw config_error("iterative rounds must be >= 0");
    for (double rate : {cfg.schedule.conv_rate, cfg.schedule.dense_rate})
      if (rate < 0.0 || rate >= 1.0)
        throw config_error("per-round prune rate must lie in [0, 1)");
  } else {
    if (cfg.schedule.target_density <= 0.0 || cfg.schedule.target_density > 1.0)
      throw config_error("one-shot target density must lie in (0, 1]");
  }
  cfg.source_hyper.validate();
  cfg.target_hyper.validate();
}

namespace detail {

double median(std::vector<double> v) {
  if (v.empty()) throw contract_error("median of empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const RunRow& baseline_row(const ExperimentResult& result, uint64_t seed) {
  for (const auto& r : result.rows)
    if (r.round < 0 && r.seed == seed) return r;
  throw contract_error("result has no baseline row for seed " +
                       std::to_string(seed));
}

}  // namespace detail

namespace {

const char* schedule_mode_name(PruneSchedule::Mode m) {
  return m == PruneSchedule::Mode::iterative ? "iterative" : "one-shot";
}

// Internal cache file: the report columns plus the round index, so resumed
// runs can tell cells at density 1.0 apart from the baseline.
constexpr const char* kRowsFile = "rows.csv";

std::string cache_line(const RunRow& r) {
  return report_csv_line(r) + "," + std::to_string(r.round);
}

RunRow parse_cache_line(const std::string& line) {
  const auto pos = line.rfind(',');
  if (pos == std::string::npos)
    throw io_error(io_error::Kind::bad_value, "bad cache row: " + line);
  RunRow r = parse_report_row(line.substr(0, pos));
  r.round =
      static_cast<int>(text::parse_int(line.substr(pos + 1), "cache round"));
  return r;
}

// A canonical text form of everything that affects results (not wall time,
// not worker count). Guards cached rows against config drift in an out-dir.
std::string config_fingerprint(const ExperimentConfig& cfg,
                               const TaskSpec& source_task,
                               const TaskSpec& target_task) {
  std::ostringstream out;
  out << "name=" << cfg.name << "\narch=" << cfg.arch
      << "\nsource=" << source_task.name << "\ntarget=" << target_task.name
      << "\nsource_augment=" << source_task.augment
      << "\ntarget_augment=" << target_task.augment
      << "\nschedule=" << schedule_mode_name(cfg.schedule.mode)
      << " conv=" << text::fmt_float(cfg.schedule.conv_rate)
      << " dense=" << text::fmt_float(cfg.schedule.dense_rate)
      << " rounds=" << cfg.schedule.rounds
      << " target_density=" << text::fmt_float(cfg.schedule.target_density)
      << " global=" << cfg.schedule.global_ranking << "\nmodes=";
  for (auto m : cfg.reset_modes) out << reset_mode_name(m) << ' ';
  out << "\nfreeze=" << freeze_policy_name(cfg.freeze.kind)
      << "\nhead=" << (cfg.head.kind == HeadSpec::Kind::linear ? "linear" : "fc2")
      << ":" << cfg.head.hidden << " replace=" << cfg.replace_head << "\n";
  auto hyper = [&](const char* tag, const Hyperparams& h) {
    out << tag << ": steps=" << h.total_steps << " batch=" << h.batch_size
        << " eval=" << h.eval_interval
        << " ckpt=" << h.checkpoint_every_evals
        << " mom=" << text::fmt_float(h.momentum)
        << " wd=" << text::fmt_float(h.weight_decay) << " lr=";
    for (const auto& [s, v] : h.lr.points)
      out << s << ':' << text::fmt_float(v) << ' ';
    out << "\n";
  };
  hyper("source_hyper", cfg.source_hyper);
  hyper("target_hyper", cfg.target_hyper);
  out << "seeds=";
  for (auto s : cfg.seeds) out << s << ' ';
  out << "\n";
  return out.str();
}

// Everything shared by one seed's grid cells.
struct SeedContext {
  uint64_t seed = 0;
  std::string source_dir;
  std::vector<MaskLevel> levels;
  uint64_t head_seed = 0;   // one head draw per seed: cells stay comparable
  uint64_t train_seed = 0;  // ditto for the target-phase batch order
};

// Minimal fixed-size pool over a job list; the first exception wins and is
// rethrown on the calling thread after the queue drains.
void run_jobs(const std::vector<std::function<void()>>& jobs, int workers) {
  if (jobs.empty()) return;
  const int n =
      std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    for (const auto& job : jobs) job();
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

ExperimentResult ticket_transfer(const ExperimentConfig& cfg,
                                 const std::string& out_dir, int workers) {
  validate_config(cfg);
  const TaskSpec source_task = load_task(cfg.source);
  TaskSpec target_task = load_task(cfg.target);

  // Channel adaptation: a single-channel target rides a multi-channel
  // source by replication; any other mismatch is a configuration error.
  if (target_task.train.channels() != source_task.train.channels()) {
    if (target_task.train.channels() == 1)
      target_task =
          replicate_channels(target_task, source_task.train.channels());
    else
      throw config_error("source/target channel counts are incompatible");
  }
  if (target_task.train.height() != source_task.train.height() ||
      target_task.train.width() != source_task.train.width())
    throw config_error("source/target image sizes differ");
  if (!cfg.replace_head && target_task.num_classes != source_task.num_classes)
    throw config_error(
        "class counts differ; configure head replacement for the target");

  const Architecture source_arch = make_preset(
      cfg.arch,
      {source_task.train.channels(), source_task.train.height(),
       source_task.train.width()},
      source_task.num_classes);
  const auto source_layout = param_layout(source_arch);

  fs::create_directories(out_dir);
  const std::string fingerprint =
      config_fingerprint(cfg, source_task, target_task);
  const std::string fp_path = out_dir + "/config.fingerprint";
  if (fs::exists(fp_path)) {
    std::ifstream in(fp_path);
    std::string existing((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    if (existing != fingerprint)
      throw config_error(out_dir +
                         " holds results for a different configuration; "
                         "choose a fresh --out-dir");
  } else {
    serial::atomic_write_file(fp_path,
                              [&](std::ostream& o) { o << fingerprint; });
  }

  // Resume state: previously completed rows keyed by (seed, round, mode).
  std::map<std::tuple<uint64_t, int, std::string>, RunRow> done;
  const std::string rows_path = out_dir + "/" + kRowsFile;
  if (fs::exists(rows_path)) {
    std::ifstream in(rows_path);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      RunRow r = parse_cache_line(line);
      done[{r.seed, r.round, r.reset_mode}] = std::move(r);
    }
  }
  std::mutex rows_mutex;
  auto persist = [&](const RunRow& r) {
    std::lock_guard<std::mutex> lock(rows_mutex);
    std::ofstream out(rows_path, std::ios::app);
    if (!out) throw io_error(io_error::Kind::write_failure, rows_path);
    out << cache_line(r) << '\n';
    if (!out) throw io_error(io_error::Kind::write_failure, rows_path);
    done[{r.seed, r.round, r.reset_mode}] = r;
  };
  auto is_done = [&](uint64_t seed, int round, const std::string& mode) {
    std::lock_guard<std::mutex> lock(rows_mutex);
    return done.count({seed, round, mode}) != 0;
  };

  // Fixed row fields.
  RunRow proto;
  proto.arch = cfg.arch;
  proto.source = source_task.name;
  proto.target = target_task.name;
  proto.schedule_mode = schedule_mode_name(cfg.schedule.mode);
  proto.freeze = freeze_policy_name(cfg.freeze.kind);

  // One target fine-tune: reset -> optional head replacement -> train.
  auto run_cell = [&](const SeedContext& sc, const MaskLevel& level,
                      const ResetMode::Kind mode_kind, int round) -> RunRow {
    TrajectoryStore traj(sc.source_dir);
    ResetMode mode;
    mode.kind = mode_kind;
    mode.dist = cfg.dist;
    if (mode_kind == ResetMode::Kind::random)
      mode.seed = Rng(sc.seed)
                      .child("random-reset", static_cast<uint64_t>(round + 1))
                      .seed();
    ParameterSet<float> params =
        reset<float>(source_arch, traj, mode, level.masks);

    Architecture arch = source_arch;
    if (cfg.replace_head) {
      auto replaced = replace_head(arch, params, cfg.head,
                                   target_task.num_classes, sc.head_seed,
                                   cfg.dist);
      arch = std::move(replaced.first);
      params = std::move(replaced.second);
    }

    auto outcome =
        train_model<float>(arch, std::move(params), level.masks, cfg.freeze,
                           target_task, cfg.target_hyper, sc.train_seed);
    RunRow row = proto;
    row.density_prunable = level.density_prunable;
    row.density_whole = level.density_whole;
    row.reset_mode = reset_mode_name(mode_kind);
    row.seed = sc.seed;
    row.best_step = outcome.report.best_step;
    row.best_val_loss = outcome.report.best_val_loss;
    row.test_accuracy = outcome.report.test_accuracy;
    row.wall_ms = outcome.report.wall_ms;
    row.round = round;
    row.divergent = outcome.report.divergent;
    return row;
  };

  // Phase A per seed: source training (cached on disk), the mask schedule,
  // and the dense baseline that defines k and alpha for this seed.
  std::vector<SeedContext> contexts(cfg.seeds.size());
  std::vector<std::function<void()>> phase_a;
  for (size_t si = 0; si < cfg.seeds.size(); ++si) {
    phase_a.push_back([&, si] {
      const uint64_t seed = cfg.seeds[si];
      SeedContext sc;
      sc.seed = seed;
      sc.source_dir = out_dir + "/s" + std::to_string(seed) + "/source";
      sc.head_seed = Rng(seed).child("target-head").seed();
      sc.train_seed = Rng(seed).child("target-train").seed();

      {
        TrajectoryStore traj(sc.source_dir);
        const bool complete =
            !traj.empty() && traj.final_step() == cfg.source_hyper.total_steps;
        if (!complete) {
          if (!traj.empty()) {
            // Stale partial trajectory (interrupted run or a different
            // step budget): rebuild from scratch.
            fs::remove_all(sc.source_dir);
          }
          TrajectoryStore fresh(sc.source_dir);
          auto params = init_params<float>(
              source_arch, cfg.dist, Rng(seed).child("source-init").seed());
          const MaskSet dense_masks = ones_like(params);
          auto outcome = train_model<float>(
              source_arch, std::move(params), dense_masks, FreezePolicy{},
              source_task, cfg.source_hyper,
              Rng(seed).child("source-train").seed(), &fresh);
          if (outcome.report.divergent)
            throw numeric_error(
                "source training diverged at step " +
                std::to_string(outcome.report.divergence_step) + " (seed " +
                std::to_string(seed) + ")");
        }
      }

      // Mask schedule over theta_S magnitudes (best source checkpoint).
      TrajectoryStore traj(sc.source_dir);
      traj.retain_essentials();  // resets only ever need step 0 / best / final
      auto theta_s = traj.load_step<float>(traj.best().step, source_layout);
      sc.levels = schedule_levels(theta_s, cfg.schedule);

      // Dense baseline: unpruned theta_S fine-tuned, same settings as cells.
      if (!is_done(seed, -1, "late")) {
        MaskLevel dense{-1, ones_like(theta_s), 1.0, 1.0};
        RunRow base = run_cell(sc, dense, ResetMode::Kind::late, -1);
        base.is_winning_ticket = true;  // equality with itself
        persist(base);
      }
      contexts[si] = std::move(sc);
    });
  }
  run_jobs(phase_a, workers);

  // Phase B: the (level x mode) grid; the winning-ticket flag compares
  // against the now-known same-seed baseline.
  std::vector<std::function<void()>> phase_b;
  for (const auto& sc : contexts) {
    const RunRow base = done.at({sc.seed, -1, "late"});
    for (const auto& level : sc.levels) {
      for (const auto mode : cfg.reset_modes) {
        if (is_done(sc.seed, level.round, reset_mode_name(mode))) continue;
        phase_b.push_back([&, base, mode] {
          RunRow row = run_cell(sc, level, mode, level.round);
          row.is_winning_ticket = row.best_step <= base.best_step &&
                                  row.test_accuracy >= base.test_accuracy;
          persist(row);
        });
      }
    }
  }
  run_jobs(phase_b, workers);

  ExperimentResult result;
  result.config = cfg;
  for (const auto& [key, row] : done) result.rows.push_back(row);
  sort_rows(result.rows);
  return result;
}

bool winning_ticket_test(const ExperimentResult& result, double density,
                         ResetMode::Kind mode, uint64_t seed) {
  const RunRow& base = detail::baseline_row(result, seed);
  for (const auto& r : result.rows) {
    if (r.round < 0 || r.seed != seed) continue;
    if (r.reset_mode != reset_mode_name(mode)) continue;
    if (std::abs(r.density_prunable - density) > 1e-9) continue;
    return r.best_step <= base.best_step &&
           r.test_accuracy >= base.test_accuracy;
  }
  throw contract_error("no cell at density " + text::fmt_float(density) +
                       ", mode " + std::string(reset_mode_name(mode)) +
                       ", seed " + std::to_string(seed));
}

bool winning_ticket_test_median(const ExperimentResult& result, double density,
                                ResetMode::Kind mode) {
  std::vector<double> cell_steps, cell_accs, base_steps, base_accs;
  for (const auto& r : result.rows) {
    if (r.round < 0) {
      base_steps.push_back(static_cast<double>(r.best_step));
      base_accs.push_back(r.test_accuracy);
    } else if (r.reset_mode == reset_mode_name(mode) &&
               std::abs(r.density_prunable - density) <= 1e-9) {
      cell_steps.push_back(static_cast<double>(r.best_step));
      cell_accs.push_back(r.test_accuracy);
    }
  }
  if (cell_steps.empty())
    throw contract_error("no cells at density " + text::fmt_float(density) +
                         ", mode " + reset_mode_name(mode));
  return detail::median(cell_steps) <= detail::median(base_steps) &&
         detail::median(cell_accs) >= detail::median(base_accs);
}

}  // namespace ltx
