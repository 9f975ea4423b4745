#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/trainer.hpp"

namespace snnrtrl {

struct GradcheckSpec {
  int trials = 1;           // first n training trials are checked
  double fd_step = 1e-5;
  double tol_exact = 1e-10; // bptt vs rtrl_exact
  double tol_sparse = 1e-12;// rtrl_sparse vs mixed
  double tol_fd = 1e-4;     // smooth bptt vs finite differences
};

struct BenchSpec {
  std::vector<EngineKind> engines{EngineKind::bptt, EngineKind::rtrl_exact, EngineKind::rtrl_sparse,
                                  EngineKind::mixed};
  std::vector<int> k{8, 16, 32};
  std::vector<int> T{10, 20};
  int n_in = 0;  // 0: same as k
};

struct AblationSpec {
  std::vector<ArchMode> modes{ArchMode::FF, ArchMode::RC, ArchMode::RD};
  std::vector<HeadKind> readouts{HeadKind::sum_readout_ce, HeadKind::max_readout_ce};
};

// One grid axis: a JSON pointer into the resolved config and the values it takes
// (each value as JSON text).
struct GridAxis {
  std::string pointer;
  std::vector<std::string> values;
};

struct GridSpec {
  std::vector<GridAxis> axes;
  int budget = 0;  // max (config, seed) runs; 0 = unlimited
  int top = 10;
};

struct RunConfig {
  ExperimentConfig experiment;
  GradcheckSpec gradcheck;
  BenchSpec bench;
  AblationSpec ablation;
  GridSpec grid;
};

// Strict loader: unknown keys, wrong types and violated invariants raise
// ConfigError naming the field path; syntax errors carry line:column.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
// IoError if the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved form (every default written out); parse_config of it
// reproduces the same resolved form.
std::string resolved_config_json(const RunConfig& config);
std::string spec_hash(const RunConfig& config);

// Sets each pointer of the resolved config to the given JSON value text and
// re-validates. Pointers must name existing fields.
RunConfig apply_patches(const RunConfig& config,
                        const std::vector<std::pair<std::string, std::string>>& patches);

// --seed override: task seed becomes `seed`, run seeds become seed, seed+1, ...
void override_seed(RunConfig& config, std::uint64_t seed);

}  // namespace snnrtrl
