#include "ltx/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ltx/text.hpp"

namespace ltx {

namespace fs = std::filesystem;

TrajectoryStore::TrajectoryStore(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec)
    throw io_error(io_error::Kind::write_failure,
                   "cannot create " + dir_ + ": " + ec.message());
  const std::string manifest = dir_ + "/manifest.txt";
  if (!fs::exists(manifest)) return;
  std::ifstream is(manifest);
  if (!is)
    throw io_error(io_error::Kind::not_found, "cannot open " + manifest);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    const auto fields = text::split(trimmed, ',');
    if (fields.size() != 3)
      throw io_error(io_error::Kind::bad_value,
                     manifest + ":" + std::to_string(lineno) +
                         ": expected \"step, val_loss, filename\"");
    CheckpointInfo info;
    info.step = text::parse_int(fields[0], "manifest step");
    info.val_loss = text::parse_double(fields[1], "manifest val_loss");
    info.filename = std::string(text::trim(fields[2]));
    if (!records_.empty() && info.step <= records_.back().step)
      throw io_error(io_error::Kind::bad_value,
                     manifest + ": steps not strictly increasing");
    records_.push_back(std::move(info));
  }
  if (!records_.empty() && records_.front().step != 0)
    throw io_error(io_error::Kind::bad_value, manifest + ": missing step 0");
}

std::string TrajectoryStore::filename_for(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%08lld.ltck",
                static_cast<long long>(step));
  return buf;
}

void TrajectoryStore::check_recordable(int64_t step, double val_loss) const {
  if (!std::isfinite(val_loss))
    throw contract_error("refusing to record non-finite validation loss");
  if (records_.empty()) {
    if (step != 0)
      throw contract_error("first recorded step must be 0 (got " +
                           std::to_string(step) + ")");
    return;
  }
  if (step <= records_.back().step)
    throw contract_error("steps must be strictly increasing: " +
                         std::to_string(step) + " after " +
                         std::to_string(records_.back().step));
}

void TrajectoryStore::append(int64_t step, double val_loss,
                             std::string filename) {
  records_.push_back({step, val_loss, std::move(filename)});
  write_manifest();
}

void TrajectoryStore::write_manifest() const {
  serial::atomic_write_file(dir_ + "/manifest.txt", [&](std::ostream& os) {
    for (const auto& r : records_)
      os << r.step << ", " << text::fmt_float(r.val_loss) << ", " << r.filename
         << "\n";
  });
}

bool TrajectoryStore::has_step(int64_t step) const {
  for (const auto& r : records_)
    if (r.step == step) return true;
  return false;
}

const CheckpointInfo& TrajectoryStore::info_at_step(int64_t step) const {
  for (const auto& r : records_)
    if (r.step == step) return r;
  throw contract_error("no checkpoint at step " + std::to_string(step));
}

const CheckpointInfo& TrajectoryStore::best() const {
  if (records_.empty()) throw contract_error("empty trajectory");
  size_t best = 0;
  for (size_t i = 1; i < records_.size(); ++i)
    if (records_[i].val_loss < records_[best].val_loss) best = i;
  return records_[best];
}

int64_t TrajectoryStore::final_step() const {
  if (records_.empty()) throw contract_error("empty trajectory");
  return records_.back().step;
}

void TrajectoryStore::retain_essentials() {
  if (records_.empty()) return;
  const int64_t keep0 = 0;
  const int64_t keep_best = best().step;
  const int64_t keep_final = records_.back().step;
  std::vector<CheckpointInfo> kept;
  for (const auto& r : records_) {
    if (r.step == keep0 || r.step == keep_best || r.step == keep_final) {
      kept.push_back(r);
    } else {
      std::error_code ec;
      fs::remove(dir_ + "/" + r.filename, ec);  // already-gone is fine
    }
  }
  records_ = std::move(kept);
  write_manifest();
}

const char* reset_mode_name(ResetMode::Kind k) {
  switch (k) {
    case ResetMode::Kind::ticket: return "ticket";
    case ResetMode::Kind::late: return "late";
    case ResetMode::Kind::random: return "random";
    case ResetMode::Kind::at_step: return "at-step";
  }
  return "?";
}

ResetMode::Kind reset_mode_from_name(const std::string& name) {
  if (name == "ticket") return ResetMode::Kind::ticket;
  if (name == "late") return ResetMode::Kind::late;
  if (name == "random") return ResetMode::Kind::random;
  if (name == "at-step") return ResetMode::Kind::at_step;
  throw config_error("unknown reset mode: " + name +
                     " (expected ticket, late, random, or at-step)");
}

}  // namespace ltx
