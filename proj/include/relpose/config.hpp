#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "relpose/data.hpp"
#include "relpose/pipeline.hpp"

namespace relpose {

// Structured key-value run configuration. The key set is closed: unknown
// keys are hard errors. See the README for the full listing.
struct RunConfig {
  // data
  std::string manifest;
  data::Convention convention = data::Convention::kRectified;
  bool swap_pairs = false;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  std::uint64_t split_seed = 1;
  // model
  net::ModelConfig model;
  // training
  int epochs = 80;
  double lr = 1e-3;
  int batch = 8;
  int step_size = 6;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  std::string resume;  // optional checkpoint path
  // run
  std::string out_dir;
};

// Parses `key = value` lines ('#' comments, blank lines allowed). Throws
// ConfigError naming the offending key on unknown keys or bad values.
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

// Existence checks for referenced paths (manifest, resume checkpoint).
void validate_paths(const RunConfig& cfg);

}  // namespace relpose
