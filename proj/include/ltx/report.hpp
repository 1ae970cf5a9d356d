#pragma once

#include <string>
#include <vector>

#include "ltx/transfer.hpp"

namespace ltx {

// Per-run CSV: one line per target-task training (cells and baselines).
// Floats print in decimal shortest-round-trip form, so a parse returns the
// exact stored values.
std::string report_csv_header();
std::string report_csv_line(const RunRow& row);
RunRow parse_report_row(const std::string& line);
std::vector<RunRow> read_report_csv(const std::string& path);
void write_report_csv(const std::string& path, std::vector<RunRow> rows);

// Per-cell medians across seeds; the baseline group reports its own medians.
struct SummaryRow {
  std::string arch, source, target, schedule_mode, reset_mode, freeze;
  int round = -1;
  double density_prunable = 1.0;
  double density_whole = 1.0;
  int64_t n_seeds = 0;
  double median_best_step = 0.0;
  double median_best_val_loss = 0.0;
  double median_test_accuracy = 0.0;
  bool is_winning_ticket = false;  // Conjecture clauses on the medians
};

std::string summary_csv_header();
std::string summary_csv_line(const SummaryRow& row);
std::vector<SummaryRow> summarize(const std::vector<RunRow>& rows);

// Writes report.csv and summary.csv under `dir`.
void emit_report(const ExperimentResult& result, const std::string& dir);

// `report` subcommand: concatenates run CSVs, de-duplicates identical rows,
// sorts, and writes a merged report plus its summary.
void merge_reports(const std::vector<std::string>& inputs,
                   const std::string& out_dir);

// Stable ordering for emitted rows (baselines first within a seed).
void sort_rows(std::vector<RunRow>& rows);

}  // namespace ltx
