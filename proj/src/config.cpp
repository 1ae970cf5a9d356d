#include "ltx/config.hpp"

#include <set>
#include <sstream>
#include <string_view>

#include "ltx/serial.hpp"
#include "ltx/text.hpp"

namespace ltx {

namespace {

std::vector<std::string_view> value_list(std::string_view value) {
  std::vector<std::string_view> out;
  for (auto piece : text::split(value, ' ')) {
    for (auto item : text::split(piece, ',')) {
      item = text::trim(item);
      if (!item.empty()) out.push_back(item);
    }
  }
  return out;
}

HeadSpec parse_head(std::string_view value, const std::string& where) {
  HeadSpec head{HeadSpec::Kind::linear, 0};
  const auto colon = value.find(':');
  const auto kind = value.substr(0, colon);
  if (kind == "linear") {
    if (colon != std::string_view::npos)
      throw config_error(where + ": a linear head takes no width");
    return head;
  }
  if (kind != "fc2")
    throw config_error(where + ": head must be linear or fc2[:width], got \"" +
                       std::string(value) + "\"");
  head.kind = HeadSpec::Kind::fc2;
  head.hidden = colon == std::string_view::npos
                    ? 96
                    : text::parse_int(value.substr(colon + 1), where);
  return head;
}

InitDist parse_dist(std::string_view value, const std::string& where) {
  if (value == "fan-in-uniform") return {InitDist::Kind::fan_in_uniform};
  if (value == "fan-in-normal") return {InitDist::Kind::fan_in_normal};
  throw config_error(where + ": unknown initialization distribution \"" +
                     std::string(value) + "\"");
}

LrSchedule parse_lr(std::string_view value, const std::string& where) {
  LrSchedule lr;
  for (auto item : value_list(value)) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos)
      throw config_error(where + ": lr entries are step:value, got \"" +
                         std::string(item) + "\"");
    lr.points.push_back({text::parse_int(item.substr(0, colon), where),
                         text::parse_double(item.substr(colon + 1), where)});
  }
  lr.validate();
  return lr;
}

struct Assignment {
  std::string section, key, value;
  int line = 0;
};

std::string head_text(const HeadSpec& head) {
  if (head.kind == HeadSpec::Kind::linear) return "linear";
  return "fc2:" + std::to_string(head.hidden);
}

void apply_experiment(ExperimentConfig& cfg, const Assignment& a,
                      const std::string& where) {
  if (a.key == "name") {
    cfg.name = a.value;
  } else if (a.key == "arch") {
    cfg.arch = a.value;
  } else if (a.key == "seeds") {
    cfg.seeds.clear();
    for (auto item : value_list(a.value))
      cfg.seeds.push_back(
          static_cast<uint64_t>(text::parse_int(item, where)));
  } else if (a.key == "reset_modes") {
    cfg.reset_modes.clear();
    for (auto item : value_list(a.value))
      cfg.reset_modes.push_back(reset_mode_from_name(std::string(item)));
  } else if (a.key == "freeze") {
    cfg.freeze.kind = freeze_policy_from_name(a.value);
  } else if (a.key == "head") {
    cfg.head = parse_head(a.value, where);
  } else if (a.key == "replace_head") {
    cfg.replace_head = text::parse_bool(a.value, where);
  } else if (a.key == "dist") {
    cfg.dist = parse_dist(a.value, where);
  } else {
    throw config_error(where + ": unknown key \"" + a.key + "\"");
  }
}

void apply_task(TaskSource& src, const Assignment& a,
                const std::string& where) {
  if (a.key == "kind") {
    if (a.value == "synthetic")
      src.kind = TaskSource::Kind::synthetic;
    else if (a.value == "files")
      src.kind = TaskSource::Kind::files;
    else
      throw config_error(where + ": task kind must be synthetic or files");
  } else if (a.key == "dir") {
    src.dir = a.value;
  } else if (a.key == "synth_seed") {
    src.synth_seed = static_cast<uint64_t>(text::parse_int(a.value, where));
  } else if (a.key == "augment") {
    src.augment = text::parse_bool(a.value, where);
  } else {
    throw config_error(where + ": unknown key \"" + a.key + "\"");
  }
}

void apply_synth(SynthSpec& synth, const Assignment& a,
                 const std::string& where) {
  if (a.key == "num_classes") {
    synth.num_classes = text::parse_int(a.value, where);
  } else if (a.key == "channels") {
    synth.channels = text::parse_int(a.value, where);
  } else if (a.key == "height") {
    synth.height = text::parse_int(a.value, where);
  } else if (a.key == "width") {
    synth.width = text::parse_int(a.value, where);
  } else if (a.key == "train_per_class") {
    synth.train_per_class = text::parse_int(a.value, where);
  } else if (a.key == "val_per_class") {
    synth.val_per_class = text::parse_int(a.value, where);
  } else if (a.key == "test_per_class") {
    synth.test_per_class = text::parse_int(a.value, where);
  } else if (a.key == "noise") {
    synth.noise = text::parse_double(a.value, where);
  } else {
    throw config_error(where + ": unknown key \"" + a.key + "\"");
  }
}

void apply_schedule(PruneSchedule& s, const Assignment& a,
                    const std::string& where) {
  if (a.key == "mode") {
    if (a.value == "iterative")
      s.mode = PruneSchedule::Mode::iterative;
    else if (a.value == "one-shot")
      s.mode = PruneSchedule::Mode::one_shot;
    else
      throw config_error(where + ": mode must be iterative or one-shot");
  } else if (a.key == "conv_rate") {
    s.conv_rate = text::parse_double(a.value, where);
  } else if (a.key == "dense_rate") {
    s.dense_rate = text::parse_double(a.value, where);
  } else if (a.key == "rounds") {
    s.rounds = static_cast<int>(text::parse_int(a.value, where));
  } else if (a.key == "target_density") {
    s.target_density = text::parse_double(a.value, where);
  } else if (a.key == "global_ranking") {
    s.global_ranking = text::parse_bool(a.value, where);
  } else {
    throw config_error(where + ": unknown key \"" + a.key + "\"");
  }
}

void apply_hyper(Hyperparams& h, const Assignment& a,
                 const std::string& where) {
  if (a.key == "lr") {
    h.lr = parse_lr(a.value, where);
  } else if (a.key == "momentum") {
    h.momentum = text::parse_double(a.value, where);
  } else if (a.key == "weight_decay") {
    h.weight_decay = text::parse_double(a.value, where);
  } else if (a.key == "batch_size") {
    h.batch_size = text::parse_int(a.value, where);
  } else if (a.key == "total_steps") {
    h.total_steps = text::parse_int(a.value, where);
  } else if (a.key == "eval_interval") {
    h.eval_interval = text::parse_int(a.value, where);
  } else if (a.key == "checkpoint_every_evals") {
    h.checkpoint_every_evals = text::parse_int(a.value, where);
  } else if (a.key == "eval_batch") {
    h.eval_batch = text::parse_int(a.value, where);
  } else {
    throw config_error(where + ": unknown key \"" + a.key + "\"");
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text_in) {
  ExperimentConfig cfg;
  std::string section = "experiment";
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in(text_in);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;

    const std::string where = "config line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error(where + ": unterminated section header");
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      static const std::set<std::string> known{
          "experiment",   "source",       "target",   "source.synth",
          "target.synth", "schedule",     "source_hyper", "target_hyper"};
      if (!known.count(section))
        throw config_error(where + ": unknown section [" + section + "]");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw config_error(where + ": expected key = value");
    Assignment a;
    a.section = section;
    a.key = std::string(text::trim(line.substr(0, eq)));
    a.value = std::string(text::trim(line.substr(eq + 1)));
    a.line = line_no;
    if (a.key.empty()) throw config_error(where + ": empty key");
    if (!seen.insert({a.section, a.key}).second)
      throw config_error(where + ": duplicate key \"" + a.key + "\" in [" +
                         a.section + "]");

    if (section == "experiment") {
      apply_experiment(cfg, a, where);
    } else if (section == "source") {
      apply_task(cfg.source, a, where);
    } else if (section == "target") {
      apply_task(cfg.target, a, where);
    } else if (section == "source.synth") {
      apply_synth(cfg.source.synth, a, where);
    } else if (section == "target.synth") {
      apply_synth(cfg.target.synth, a, where);
    } else if (section == "schedule") {
      apply_schedule(cfg.schedule, a, where);
    } else if (section == "source_hyper") {
      apply_hyper(cfg.source_hyper, a, where);
    } else {
      apply_hyper(cfg.target_hyper, a, where);
    }
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  auto in = serial::open_input(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_experiment_config(buf.str());
  } catch (const config_error& e) {
    throw config_error(path + ": " + e.what());
  }
}

std::string experiment_config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "name = " << cfg.name << "\n";
  out << "arch = " << cfg.arch << "\n";
  out << "seeds =";
  for (auto s : cfg.seeds) out << ' ' << s;
  out << "\nreset_modes =";
  for (auto m : cfg.reset_modes) out << ' ' << reset_mode_name(m);
  out << "\nfreeze = " << freeze_policy_name(cfg.freeze.kind) << "\n";
  out << "head = " << head_text(cfg.head) << "\n";
  out << "replace_head = " << (cfg.replace_head ? "true" : "false") << "\n";
  out << "dist = "
      << (cfg.dist.kind == InitDist::Kind::fan_in_uniform ? "fan-in-uniform"
                                                          : "fan-in-normal")
      << "\n";

  auto task = [&](const char* label, const TaskSource& src) {
    out << "\n[" << label << "]\n";
    out << "kind = "
        << (src.kind == TaskSource::Kind::synthetic ? "synthetic" : "files")
        << "\n";
    if (!src.dir.empty()) out << "dir = " << src.dir << "\n";
    out << "synth_seed = " << src.synth_seed << "\n";
    out << "augment = " << (src.augment ? "true" : "false") << "\n";
    out << "\n[" << label << ".synth]\n";
    out << "num_classes = " << src.synth.num_classes << "\n";
    out << "channels = " << src.synth.channels << "\n";
    out << "height = " << src.synth.height << "\n";
    out << "width = " << src.synth.width << "\n";
    out << "train_per_class = " << src.synth.train_per_class << "\n";
    out << "val_per_class = " << src.synth.val_per_class << "\n";
    out << "test_per_class = " << src.synth.test_per_class << "\n";
    out << "noise = " << text::fmt_float(src.synth.noise) << "\n";
  };
  task("source", cfg.source);
  task("target", cfg.target);

  out << "\n[schedule]\n";
  out << "mode = "
      << (cfg.schedule.mode == PruneSchedule::Mode::iterative ? "iterative"
                                                              : "one-shot")
      << "\n";
  out << "conv_rate = " << text::fmt_float(cfg.schedule.conv_rate) << "\n";
  out << "dense_rate = " << text::fmt_float(cfg.schedule.dense_rate) << "\n";
  out << "rounds = " << cfg.schedule.rounds << "\n";
  out << "target_density = " << text::fmt_float(cfg.schedule.target_density)
      << "\n";
  out << "global_ranking = " << (cfg.schedule.global_ranking ? "true" : "false")
      << "\n";

  auto hyper = [&](const char* label, const Hyperparams& h) {
    out << "\n[" << label << "]\n";
    if (!h.lr.points.empty()) {
      out << "lr =";
      for (const auto& [s, v] : h.lr.points)
        out << ' ' << s << ':' << text::fmt_float(v);
      out << "\n";
    }
    out << "momentum = " << text::fmt_float(h.momentum) << "\n";
    out << "weight_decay = " << text::fmt_float(h.weight_decay) << "\n";
    out << "batch_size = " << h.batch_size << "\n";
    out << "total_steps = " << h.total_steps << "\n";
    out << "eval_interval = " << h.eval_interval << "\n";
    out << "checkpoint_every_evals = " << h.checkpoint_every_evals << "\n";
    out << "eval_batch = " << h.eval_batch << "\n";
  };
  hyper("source_hyper", cfg.source_hyper);
  hyper("target_hyper", cfg.target_hyper);
  return out.str();
}

}  // namespace ltx
