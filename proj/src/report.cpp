#include "ltx/report.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

#include "ltx/serial.hpp"
#include "ltx/text.hpp"

namespace ltx {

namespace {

constexpr const char* kReportHeader =
    "arch,source,target,schedule_mode,density_prunable,density_whole,"
    "reset_mode,freeze,seed,best_step,best_val_loss,test_accuracy,"
    "is_winning_ticket,wall_ms";

constexpr const char* kSummaryHeader =
    "arch,source,target,schedule_mode,density_prunable,density_whole,"
    "reset_mode,freeze,n_seeds,median_best_step,median_best_val_loss,"
    "median_test_accuracy,is_winning_ticket";

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool_cell(std::string_view s, const std::string& line) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw io_error(io_error::Kind::bad_value,
                 "bad boolean '" + std::string(s) + "' in CSV row: " + line);
}

auto row_order_key(const RunRow& r) {
  // Density ranks the levels when rows come back from a parsed CSV, where
  // every cell's round reads as 0.
  return std::make_tuple(r.arch, r.source, r.target, r.schedule_mode, r.freeze,
                         r.seed, r.round, -r.density_prunable, r.reset_mode);
}

// Cells aggregate across seeds on everything that identifies a grid position.
auto cell_key(const RunRow& r) {
  return std::make_tuple(r.arch, r.source, r.target, r.schedule_mode, r.freeze,
                         r.round, r.reset_mode, r.density_prunable);
}

}  // namespace

std::string report_csv_header() { return kReportHeader; }

std::string report_csv_line(const RunRow& r) {
  std::string out;
  out += r.arch;
  out += ',';
  out += r.source;
  out += ',';
  out += r.target;
  out += ',';
  out += r.schedule_mode;
  out += ',';
  out += text::fmt_float(r.density_prunable);
  out += ',';
  out += text::fmt_float(r.density_whole);
  out += ',';
  out += r.reset_mode;
  out += ',';
  out += r.freeze;
  out += ',';
  out += std::to_string(r.seed);
  out += ',';
  out += std::to_string(r.best_step);
  out += ',';
  out += text::fmt_float(r.best_val_loss);
  out += ',';
  out += text::fmt_float(r.test_accuracy);
  out += ',';
  out += bool_str(r.is_winning_ticket);
  out += ',';
  out += std::to_string(r.wall_ms);
  return out;
}

RunRow parse_report_row(const std::string& line) {
  const auto f = text::split(line, ',');
  if (f.size() != 14)
    throw io_error(io_error::Kind::bad_value,
                   "expected 14 CSV fields, got " + std::to_string(f.size()) +
                       ": " + line);
  RunRow r;
  r.arch = f[0];
  r.source = f[1];
  r.target = f[2];
  r.schedule_mode = f[3];
  r.density_prunable = text::parse_double(f[4], "density_prunable");
  r.density_whole = text::parse_double(f[5], "density_whole");
  r.reset_mode = f[6];
  r.freeze = f[7];
  r.seed = static_cast<uint64_t>(text::parse_int(f[8], "seed"));
  r.best_step = text::parse_int(f[9], "best_step");
  r.best_val_loss = text::parse_double(f[10], "best_val_loss");
  r.test_accuracy = text::parse_double(f[11], "test_accuracy");
  r.is_winning_ticket = parse_bool_cell(f[12], line);
  r.wall_ms = text::parse_int(f[13], "wall_ms");
  // The round index is not part of the report schema; callers that need the
  // baseline/cell distinction re-tag after parsing.
  r.round = 0;
  return r;
}

std::vector<RunRow> read_report_csv(const std::string& path) {
  auto in = serial::open_input(path);
  std::string line;
  if (!std::getline(in, line))
    throw io_error(io_error::Kind::truncated, path + ": empty CSV");
  if (text::trim(line) != kReportHeader)
    throw io_error(io_error::Kind::bad_value,
                   path + ": unexpected CSV header: " + line);
  std::vector<RunRow> rows;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    rows.push_back(parse_report_row(line));
  }
  return rows;
}

void write_report_csv(const std::string& path, std::vector<RunRow> rows) {
  sort_rows(rows);
  serial::atomic_write_file(path, [&](std::ostream& out) {
    out << kReportHeader << '\n';
    for (const auto& r : rows) out << report_csv_line(r) << '\n';
  });
}

void sort_rows(std::vector<RunRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    return row_order_key(a) < row_order_key(b);
  });
}

std::string summary_csv_header() { return kSummaryHeader; }

std::string summary_csv_line(const SummaryRow& s) {
  std::string out;
  out += s.arch;
  out += ',';
  out += s.source;
  out += ',';
  out += s.target;
  out += ',';
  out += s.schedule_mode;
  out += ',';
  out += text::fmt_float(s.density_prunable);
  out += ',';
  out += text::fmt_float(s.density_whole);
  out += ',';
  out += s.reset_mode;
  out += ',';
  out += s.freeze;
  out += ',';
  out += std::to_string(s.n_seeds);
  out += ',';
  out += text::fmt_float(s.median_best_step);
  out += ',';
  out += text::fmt_float(s.median_best_val_loss);
  out += ',';
  out += text::fmt_float(s.median_test_accuracy);
  out += ',';
  out += bool_str(s.is_winning_ticket);
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<RunRow>& rows) {
  if (rows.empty()) throw contract_error("cannot summarize an empty report");

  std::map<decltype(cell_key(rows.front())), std::vector<const RunRow*>> cells;
  for (const auto& r : rows) cells[cell_key(r)].push_back(&r);

  // Baseline medians per experiment identity (arch, source, target,
  // schedule_mode, freeze), for the winning-ticket clauses.
  std::map<std::tuple<std::string, std::string, std::string, std::string,
                      std::string>,
           std::pair<double, double>>
      baseline_medians;  // -> (median best_step, median test_accuracy)
  for (const auto& [key, group] : cells) {
    if (group.front()->round >= 0) continue;
    std::vector<double> steps, accs;
    for (const auto* r : group) {
      steps.push_back(static_cast<double>(r->best_step));
      accs.push_back(r->test_accuracy);
    }
    baseline_medians[{group.front()->arch, group.front()->source,
                      group.front()->target, group.front()->schedule_mode,
                      group.front()->freeze}] = {detail::median(steps),
                                                 detail::median(accs)};
  }

  std::vector<SummaryRow> out;
  for (const auto& [key, group] : cells) {
    const RunRow& first = *group.front();
    SummaryRow s;
    s.arch = first.arch;
    s.source = first.source;
    s.target = first.target;
    s.schedule_mode = first.schedule_mode;
    s.reset_mode = first.reset_mode;
    s.freeze = first.freeze;
    s.round = first.round;
    s.density_prunable = first.density_prunable;
    s.density_whole = first.density_whole;
    s.n_seeds = static_cast<int64_t>(group.size());
    std::vector<double> steps, losses, accs;
    for (const auto* r : group) {
      steps.push_back(static_cast<double>(r->best_step));
      losses.push_back(r->best_val_loss);
      accs.push_back(r->test_accuracy);
    }
    s.median_best_step = detail::median(steps);
    s.median_best_val_loss = detail::median(losses);
    s.median_test_accuracy = detail::median(accs);
    const auto base = baseline_medians.find(
        {s.arch, s.source, s.target, s.schedule_mode, s.freeze});
    if (first.round < 0) {
      s.is_winning_ticket = true;  // the baseline trivially matches itself
    } else if (base != baseline_medians.end()) {
      s.is_winning_ticket = s.median_best_step <= base->second.first &&
                            s.median_test_accuracy >= base->second.second;
    } else {
      s.is_winning_ticket = false;  // no baseline present in this report
    }
    out.push_back(std::move(s));
  }
  return out;
}

void emit_report(const ExperimentResult& result, const std::string& dir) {
  if (result.rows.empty())
    throw contract_error("cannot emit a report with no rows");
  std::vector<RunRow> rows = result.rows;
  sort_rows(rows);
  write_report_csv(dir + "/report.csv", rows);
  const auto summary = summarize(rows);
  serial::atomic_write_file(dir + "/summary.csv", [&](std::ostream& out) {
    out << kSummaryHeader << '\n';
    for (const auto& s : summary) out << summary_csv_line(s) << '\n';
  });
}

void merge_reports(const std::vector<std::string>& inputs,
                   const std::string& out_dir) {
  if (inputs.empty()) throw contract_error("no input reports to merge");
  std::vector<RunRow> rows;
  for (const auto& path : inputs) {
    auto part = read_report_csv(path);
    // Baseline tagging survives a round-trip through the density/mode pair.
    for (auto& r : part)
      if (r.density_prunable == 1.0 && r.reset_mode == "late") r.round = -1;
    rows.insert(rows.end(), part.begin(), part.end());
  }
  sort_rows(rows);
  // Drop byte-identical duplicates (e.g. the same report merged twice).
  std::vector<RunRow> unique;
  std::set<std::string> seen;
  for (const auto& r : rows)
    if (seen.insert(report_csv_line(r)).second) unique.push_back(r);
  write_report_csv(out_dir + "/report.csv", unique);
  const auto summary = summarize(unique);
  serial::atomic_write_file(out_dir + "/summary.csv", [&](std::ostream& out) {
    out << kSummaryHeader << '\n';
    for (const auto& s : summary) out << summary_csv_line(s) << '\n';
  });
}

}  // namespace ltx
