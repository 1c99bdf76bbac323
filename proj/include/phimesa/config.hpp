#pragma once

// Experiment configuration: a small TOML subset (sections, scalar keys,
// comments) covering the [model], [train], [mesa], [data] and [out] sections.
// Every field except the corpus path has a default, and the resolved form can
// be dumped back out as a canonical snapshot that fully determines a run.

#include <string>

#include "phimesa/lm.hpp"
#include "phimesa/mesa.hpp"

namespace phimesa::config {

struct RunConfig {
    lm::ModelConfig model;
    mesa::TrainConfig train;
    mesa::ObjectiveConfig objective;
    std::string corpus_path;
    std::string run_dir = "run";
};

// Parses config text. Unknown sections or keys, type mismatches, and missing
// required fields raise a validation error naming the offending field.
RunConfig parse_run_config(const std::string& text);

// Reads and parses a config file, then checks the corpus path exists.
RunConfig load_run_config(const std::string& path);

// Canonical TOML dump of every field, suitable for config.resolved.toml.
std::string resolved_toml(const RunConfig& c);

}  // namespace phimesa::config
