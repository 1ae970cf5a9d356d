#pragma once

#include <string>

#include "ltx/transfer.hpp"

namespace ltx {

// Plain-text experiment configuration.
//
//   # comment to end of line
//   [experiment]
//   name = demo
//   seeds = 1 2 3 4 5
//   reset_modes = late ticket random
//   [source]
//   kind = synthetic
//   [source.synth]
//   num_classes = 10
//   [schedule]
//   rounds = 12
//   [target_hyper]
//   lr = 0:5e-3 1000:1e-3 1500:1e-4
//
// Section names are ExperimentConfig field paths joined with '.'; keys inside
// a section are that struct's field names. Every key is optional (defaults
// apply), unknown names and duplicate keys are config errors.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// The full configuration rendered back in the grammar above; parsing the
// result reproduces the config (used by the example files and round-trip
// tests).
std::string experiment_config_text(const ExperimentConfig& cfg);

}  // namespace ltx
