#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snnrtrl/config.hpp"
#include "snnrtrl/engines.hpp"
#include "snnrtrl/trainer.hpp"

namespace snnrtrl {

struct Checkpoint {
  std::string spec_hash;
  int epoch = 0;
  std::vector<NamedTensor> tensors;
};

Checkpoint make_checkpoint(const NetworkSpec& net, const LossProgram& program, const std::string& hash,
                           int epoch);
// {format, version, spec_hash, epoch, tensors: {name: {shape, data}}}, full precision.
std::string checkpoint_json(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies the tensors into net; names and shapes must match the layout.
void restore_checkpoint(NetworkSpec& net, const LossProgram& program, const Checkpoint& ckpt);

// {engine, seed, spec_hash, tensors: {name: {shape, data}}}
std::string gradient_dump_json(const GradientReport& report, std::uint64_t seed, const std::string& hash);

// One JSON object per line; absent errors are null.
std::string metric_json_line(const MetricRecord& rec);

std::string ablation_json(const AblationTable& table);

// Target streams: CSV with header t,y0,...,y{k-1}, one row per step.
std::string target_csv(const Eigen::MatrixXd& stream);
Eigen::MatrixXd parse_target_csv(const std::string& text);

// Loss logs over one split: online heads log every active step, locking
// heads one line per trial. Trial ids index the full dataset.
struct LossLogEntry {
  std::size_t trial = 0;
  std::optional<int> t;
  double loss = 0.0;
};

std::vector<LossLogEntry> loss_log(const NetworkSpec& net, const LossProgram& program, const TrialSet& data,
                                   Split split);
// {trial, t, loss} or {trial, loss}, one object per line.
std::string loss_log_jsonl(const std::vector<LossLogEntry>& entries);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct GridRun {
  std::vector<std::pair<std::string, std::string>> assignment;  // pointer -> value text
  std::uint64_t seed = 0;
  std::string spec_hash;
  std::optional<double> valid_error;
  std::optional<double> test_error;
  double valid_loss = 0.0;
};

struct GridResult {
  std::vector<GridRun> ranked;  // every executed run, best first
  std::vector<GridRun> best;    // first min(top, runs) of ranked
  std::size_t planned = 0;
  bool partial = false;         // budget stopped the sweep early
};

// Cartesian product of the axes (first axis slowest) times the configured
// seeds; ranked by validation error, then validation loss, then run order.
GridResult grid_search(const RunConfig& base, const GridSpec& grid);
std::string grid_json(const GridResult& result);

}  // namespace snnrtrl
