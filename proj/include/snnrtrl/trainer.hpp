#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "snnrtrl/engines.hpp"
#include "snnrtrl/losses.hpp"
#include "snnrtrl/neuron.hpp"
#include "snnrtrl/taskgen.hpp"

namespace snnrtrl {

enum class OptimizerKind { sgd, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 10.0;  // global-norm clipping; <= 0 disables
};

class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, Eigen::Index n);
  // params <- params - update(grad); entries with mask == 0 never move.
  void step(Eigen::VectorXd& params, Eigen::VectorXd grad, const Eigen::VectorXd& mask);
  std::int64_t steps() const { return t_; }

 private:
  OptimizerSpec spec_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::int64_t t_ = 0;
};

enum class TaskKind { randman, latency, memory, tracking };

struct TaskSpec {
  TaskKind kind = TaskKind::randman;
  RandmanSpec randman;
  LatencySpec latency;
  MemoryTaskSpec memory;
  TrackingSpec tracking;
};

TrialSet generate_task(const TaskSpec& task);

enum class Cadence { per_trial, per_step };

struct ExperimentConfig {
  TaskSpec task;
  NetworkTemplate network;  // n_in and n_readout are filled from the task
  LossProgram loss;
  EngineKind engine = EngineKind::bptt;
  GradOptions grad;
  OptimizerSpec optimizer;
  int epochs = 10;
  int batch_size = 1;
  Cadence cadence = Cadence::per_trial;
  std::vector<std::uint64_t> seeds{0};
  int workers = 1;
  bool eval_train = true;
};

// Network template with the task-dependent sizes filled in.
NetworkTemplate resolved_network(const ExperimentConfig& config, const TrialSet& data);

struct MetricRecord {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::optional<double> train_error;
  std::optional<double> valid_error;
  std::optional<double> test_error;
  double mean_loss = 0.0;
  std::int64_t peak_memory_elements = 0;
  std::int64_t scalar_mult_count = 0;
  double wall_ms = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<MetricRecord> metrics;
  NetworkSpec net;
  // Epoch with the lowest validation error (earliest on ties), or the last
  // epoch when there is no validation split.
  int selected_epoch = 0;
  std::optional<double> selected_valid_error;
  std::optional<double> selected_test_error;
};

Target make_target(const LossProgram& program, const TrialSet& data, std::size_t trial);

struct EvalResult {
  std::optional<double> error;  // classification tasks only
  double mean_loss = 0.0;
  std::size_t n = 0;
};

EvalResult evaluate(const NetworkSpec& net, const LossProgram& program, const TrialSet& data,
                    Split split);

// Called after every epoch (epoch 0 = initial weights).
using EpochCallback = std::function<void(const MetricRecord&, const NetworkSpec&)>;

// BPTT over stored trajectories; accepts every loss head.
RunResult train_offline(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                        const EpochCallback& on_epoch = {});
// RTRL-family engines without trajectory storage. per_step cadence rejects
// locking heads with LockingError.
RunResult train_streaming(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                          const EpochCallback& on_epoch = {});
// Dispatches on config.engine.
RunResult train_run(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                    const EpochCallback& on_epoch = {});

// Runs fn(0..n-1) on up to `workers` threads; results are stored by index so
// the outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// Sample standard deviation / sqrt(n); absent for fewer than two values.
std::optional<double> standard_error(const std::vector<double>& values);
double mean_of(const std::vector<double>& values);

struct AblationCell {
  ArchMode mode = ArchMode::RC;
  HeadKind readout = HeadKind::sum_readout_ce;
  std::vector<double> errors;  // selected test error per seed
  double mean = 0.0;
  std::optional<double> sem;
};

struct AblationTable {
  std::string task;
  std::vector<AblationCell> cells;

  const AblationCell& at(ArchMode mode, HeadKind readout) const;
  // Columns mode,readout,mean_err,sem,n_seeds; sem is empty when absent.
  std::string to_csv() const;
};

AblationTable run_ablation(const ExperimentConfig& base, const TrialSet& data,
                           const std::vector<ArchMode>& modes = {ArchMode::FF, ArchMode::RC, ArchMode::RD},
                           const std::vector<HeadKind>& readouts = {HeadKind::sum_readout_ce,
                                                                    HeadKind::max_readout_ce});

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);
std::string to_string(Cadence cadence);
Cadence cadence_from_string(const std::string& s);

}  // namespace snnrtrl
