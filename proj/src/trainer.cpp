#include "snnrtrl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "snnrtrl/errors.hpp"
#include "snnrtrl/util.hpp"

namespace snnrtrl {

Optimizer::Optimizer(const OptimizerSpec& spec, Eigen::Index n)
    : spec_(spec), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {
  if (!(spec.lr > 0.0)) throw ConfigError("optimizer learning rate must be > 0");
  if (spec.kind == OptimizerKind::adam &&
      !(spec.beta1 >= 0.0 && spec.beta1 < 1.0 && spec.beta2 >= 0.0 && spec.beta2 < 1.0)) {
    throw ConfigError("adam moment decays must lie in [0, 1)");
  }
}

void Optimizer::step(Eigen::VectorXd& params, Eigen::VectorXd grad, const Eigen::VectorXd& mask) {
  if (grad.size() != params.size() || mask.size() != params.size()) {
    throw ShapeError("optimizer: parameter / gradient size mismatch");
  }
  grad = grad.cwiseProduct(mask);
  if (spec_.clip > 0.0) {
    const double norm = grad.norm();
    if (norm > spec_.clip) grad *= spec_.clip / norm;
  }
  ++t_;
  if (spec_.kind == OptimizerKind::sgd) {
    params -= spec_.lr * grad;
    return;
  }
  m_ = spec_.beta1 * m_ + (1.0 - spec_.beta1) * grad;
  v_ = spec_.beta2 * v_ + (1.0 - spec_.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
  const Eigen::VectorXd update =
      ((m_ / bc1).array() / ((v_ / bc2).array().sqrt() + spec_.eps)).matrix();
  params -= spec_.lr * update.cwiseProduct(mask);
}

TrialSet generate_task(const TaskSpec& task) {
  switch (task.kind) {
    case TaskKind::randman: return randman_generate(task.randman);
    case TaskKind::latency: return latency_task(task.latency);
    case TaskKind::memory: return memory_stress_task(task.memory);
    case TaskKind::tracking: return tracking_task(task.tracking);
  }
  throw ConfigError("unknown task kind");
}

NetworkTemplate resolved_network(const ExperimentConfig& config, const TrialSet& data) {
  NetworkTemplate t = config.network;
  t.n_in = data.channels;
  t.n_readout = config.loss.uses_readout() ? config.loss.readout.n_classes : 0;
  return t;
}

Target make_target(const LossProgram& program, const TrialSet& data, std::size_t trial) {
  Target target;
  target.label = data.labels.at(trial);
  if (!program.uses_label()) {
    if (data.target_rasters.empty()) {
      throw ConfigError(to_string(program.head) + " needs target spike trains; task '" + data.task +
                        "' has none");
    }
    const Raster& r = data.target_rasters.at(trial);
    Eigen::MatrixXd spikes(r.steps(), r.channels());
    for (int t = 0; t < r.steps(); ++t) spikes.row(t) = r.row(t).transpose();
    if (program.head == HeadKind::van_rossum) return spike_train_target(spikes, program.kernel);
    target.stream = spikes;
  }
  return target;
}

EvalResult evaluate(const NetworkSpec& net, const LossProgram& program, const TrialSet& data,
                    Split split) {
  EvalResult res;
  const auto idx = data.indices(split);
  res.n = idx.size();
  if (idx.empty()) return res;
  std::size_t wrong = 0;
  double total = 0.0;
  for (std::size_t i : idx) {
    const Target target = make_target(program, data, i);
    NetworkState state = initial_network_state(net);
    HeadState head = head_init(program, net.k_out());
    const Raster& input = data.rasters[i];
    for (int t = 0; t < input.steps(); ++t) {
      state = network_step(net, state, input.row(t));
      head_advance(program, net.readout, state.back().s, head);
      if (head_active(program, head.t)) total += head_local_loss(program, head, target).value;
    }
    if (program.locality() == Locality::locking) total += head_final_loss(program, head, target).value;
    if (program.uses_label() && head_predict(program, head) != target.label) ++wrong;
  }
  res.mean_loss = total / static_cast<double>(idx.size());
  if (program.uses_label()) res.error = static_cast<double>(wrong) / static_cast<double>(idx.size());
  return res;
}

namespace {

class Clock {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct EpochCost {
  double loss_sum = 0.0;
  std::size_t trials = 0;
  std::int64_t peak = 0;
  std::int64_t mults = 0;
};

MetricRecord record_epoch(const ExperimentConfig& cfg, const NetworkSpec& net, const TrialSet& data,
                          std::uint64_t seed, int epoch, const EpochCost& cost, double wall_ms) {
  MetricRecord rec;
  rec.seed = seed;
  rec.epoch = epoch;
  const EvalResult valid = evaluate(net, cfg.loss, data, Split::valid);
  const EvalResult test = evaluate(net, cfg.loss, data, Split::test);
  rec.valid_error = valid.error;
  rec.test_error = test.error;
  if (cfg.eval_train || epoch == 0) {
    const EvalResult train = evaluate(net, cfg.loss, data, Split::train);
    rec.train_error = train.error;
    rec.mean_loss = epoch == 0 ? train.mean_loss : 0.0;
  }
  if (epoch > 0 && cost.trials > 0) rec.mean_loss = cost.loss_sum / static_cast<double>(cost.trials);
  rec.peak_memory_elements = cost.peak;
  rec.scalar_mult_count = cost.mults;
  rec.wall_ms = wall_ms;
  return rec;
}

void select_epoch(RunResult& run) {
  const MetricRecord* best = nullptr;
  for (const auto& rec : run.metrics) {
    if (!rec.valid_error) continue;
    if (!best || *rec.valid_error < *best->valid_error) best = &rec;
  }
  if (!best) best = &run.metrics.back();
  run.selected_epoch = best->epoch;
  run.selected_valid_error = best->valid_error;
  run.selected_test_error = best->test_error;
}

// Shared epoch loop; `trial_step` runs one training trial and returns its loss.
RunResult train_loop(const ExperimentConfig& cfg, const TrialSet& data, std::uint64_t seed,
                     const EpochCallback& on_epoch,
                     const std::function<void(NetworkSpec&, const ParamLayout&, Optimizer&,
                                              const Eigen::VectorXd&, const std::vector<std::size_t>&,
                                              EpochCost&)>& run_batch) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.loss.uses_label() && cfg.loss.readout.n_classes != data.n_classes) {
    throw ConfigError("loss has " + std::to_string(cfg.loss.readout.n_classes) + " classes, task has " +
                      std::to_string(data.n_classes));
  }
  RunResult run;
  run.seed = seed;
  run.net = build_network(resolved_network(cfg, data), derive_seed(seed, 1));
  const ParamLayout layout(run.net, cfg.loss);
  const Eigen::VectorXd mask = param_mask(run.net, layout);
  Optimizer opt(cfg.optimizer, layout.size());

  Clock clock;
  run.metrics.push_back(record_epoch(cfg, run.net, data, seed, 0, {}, clock.ms()));
  if (on_epoch) on_epoch(run.metrics.back(), run.net);

  std::vector<std::size_t> train = data.indices(Split::train);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(train.begin(), train.end(), rng);
    EpochCost cost;
    for (std::size_t b = 0; b < train.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(train.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> batch(train.begin() + static_cast<std::ptrdiff_t>(b),
                                           train.begin() + static_cast<std::ptrdiff_t>(e));
      run_batch(run.net, layout, opt, mask, batch, cost);
    }
    run.metrics.push_back(record_epoch(cfg, run.net, data, seed, epoch, cost, clock.ms()));
    if (on_epoch) on_epoch(run.metrics.back(), run.net);
  }
  select_epoch(run);
  return run;
}

void apply_update(NetworkSpec& net, const ParamLayout& layout, Optimizer& opt,
                  const Eigen::VectorXd& mask, const Eigen::VectorXd& grad) {
  Eigen::VectorXd params = get_params(net, layout);
  opt.step(params, grad, mask);
  set_params(net, layout, params);
}

}  // namespace

RunResult train_offline(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                        const EpochCallback& on_epoch) {
  if (config.engine != EngineKind::bptt) throw UsageError("train_offline runs the bptt engine");
  return train_loop(config, data, seed, on_epoch,
                    [&](NetworkSpec& net, const ParamLayout& layout, Optimizer& opt,
                        const Eigen::VectorXd& mask, const std::vector<std::size_t>& batch,
                        EpochCost& cost) {
                      Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
                      for (std::size_t i : batch) {
                        const Target target = make_target(config.loss, data, i);
                        const auto rep = compute_gradient(EngineKind::bptt, net, data.rasters[i],
                                                          config.loss, target, config.grad);
                        grad += rep.flat();
                        cost.loss_sum += rep.loss;
                        ++cost.trials;
                        cost.peak = std::max(cost.peak, rep.peak_memory_elements);
                        cost.mults += rep.scalar_mult_count;
                      }
                      apply_update(net, layout, opt, mask, grad / static_cast<double>(batch.size()));
                    });
}

RunResult train_streaming(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                          const EpochCallback& on_epoch) {
  if (config.engine == EngineKind::bptt || config.engine == EngineKind::finite_difference) {
    throw UsageError("train_streaming needs rtrl_exact, rtrl_sparse or mixed");
  }
  if (config.cadence == Cadence::per_step && config.loss.locality() == Locality::locking) {
    throw LockingError(to_string(config.loss.head) +
                       " is only available at the end of a trial; use per_trial cadence");
  }
  std::unique_ptr<OnlineEngine> engine;
  const NetworkSpec* bound = nullptr;
  return train_loop(
      config, data, seed, on_epoch,
      [&](NetworkSpec& net, const ParamLayout& layout, Optimizer& opt, const Eigen::VectorXd& mask,
          const std::vector<std::size_t>& batch, EpochCost& cost) {
        if (!engine || bound != &net) {
          engine = make_online_engine(config.engine, net, config.loss, config.grad);
          bound = &net;
        }
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
        for (std::size_t i : batch) {
          const Target target = make_target(config.loss, data, i);
          check_target(config.loss, target, data.rasters[i].steps(), net.k_out());
          const Raster& input = data.rasters[i];
          engine->begin_trial();
          for (int t = 0; t < input.steps(); ++t) {
            engine->step(input.row(t), target);
            if (config.cadence == Cadence::per_step) {
              apply_update(net, layout, opt, mask, engine->take_gradient().flat());
            }
          }
          cost.loss_sum += engine->finish(target);
          ++cost.trials;
          if (config.cadence == Cadence::per_trial) grad += engine->take_gradient().flat();
        }
        cost.peak = std::max(cost.peak, engine->cost().peak);
        cost.mults = engine->cost().mults;
        if (config.cadence == Cadence::per_trial) {
          apply_update(net, layout, opt, mask, grad / static_cast<double>(batch.size()));
        }
      });
}

RunResult train_run(const ExperimentConfig& config, const TrialSet& data, std::uint64_t seed,
                    const EpochCallback& on_epoch) {
  if (config.engine == EngineKind::bptt) return train_offline(config, data, seed, on_epoch);
  return train_streaming(config, data, seed, on_epoch);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::optional<double> standard_error(const std::vector<double>& values) {
  if (values.size() < 2) return std::nullopt;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double n = static_cast<double>(values.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

const AblationCell& AblationTable::at(ArchMode mode, HeadKind readout) const {
  for (const auto& c : cells) {
    if (c.mode == mode && c.readout == readout) return c;
  }
  throw UsageError("ablation table has no cell " + to_string(mode) + "/" + to_string(readout));
}

namespace {

std::string readout_label(HeadKind h) {
  if (h == HeadKind::sum_readout_ce) return "sum";
  if (h == HeadKind::max_readout_ce) return "max";
  return to_string(h);
}

}  // namespace

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "mode,readout,mean_err,sem,n_seeds\n";
  for (const auto& c : cells) {
    out << to_string(c.mode) << ',' << readout_label(c.readout) << ',' << c.mean << ',';
    if (c.sem) out << *c.sem;
    out << ',' << c.errors.size() << '\n';
  }
  return out.str();
}

AblationTable run_ablation(const ExperimentConfig& base, const TrialSet& data,
                           const std::vector<ArchMode>& modes, const std::vector<HeadKind>& readouts) {
  if (base.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (HeadKind h : readouts) {
    if (!(h == HeadKind::sum_readout_ce || h == HeadKind::max_readout_ce ||
          h == HeadKind::step_readout_ce)) {
      throw ConfigError("ablation readouts must be classification heads");
    }
  }
  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  AblationTable table;
  table.task = data.task;
  std::vector<Job> jobs;
  for (ArchMode mode : modes) {
    for (HeadKind readout : readouts) {
      AblationCell cell;
      cell.mode = mode;
      cell.readout = readout;
      cell.errors.assign(base.seeds.size(), 0.0);
      for (std::uint64_t s : base.seeds) jobs.push_back({table.cells.size(), s});
      table.cells.push_back(cell);
    }
  }
  std::vector<double> errors(jobs.size(), 0.0);
  parallel_for(jobs.size(), base.workers, [&](std::size_t j) {
    ExperimentConfig cfg = base;
    const auto& cell = table.cells[jobs[j].cell];
    cfg.network.mode = cell.mode;
    cfg.loss.head = cell.readout;
    const RunResult run = train_run(cfg, data, jobs[j].seed);
    errors[j] = run.selected_test_error.value_or(1.0);
  });
  std::vector<std::size_t> filled(table.cells.size(), 0);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& cell = table.cells[jobs[j].cell];
    cell.errors[filled[jobs[j].cell]++] = errors[j];
  }
  for (auto& cell : table.cells) {
    cell.mean = mean_of(cell.errors);
    cell.sem = standard_error(cell.errors);
  }
  return table;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::randman: return "randman";
    case TaskKind::latency: return "latency";
    case TaskKind::memory: return "memory";
    case TaskKind::tracking: return "tracking";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "randman") return TaskKind::randman;
  if (s == "latency") return TaskKind::latency;
  if (s == "memory") return TaskKind::memory;
  if (s == "tracking") return TaskKind::tracking;
  throw ConfigError("unknown task '" + s + "'");
}

std::string to_string(Cadence cadence) {
  return cadence == Cadence::per_step ? "per_step" : "per_trial";
}

Cadence cadence_from_string(const std::string& s) {
  if (s == "per_trial") return Cadence::per_trial;
  if (s == "per_step") return Cadence::per_step;
  throw ConfigError("unknown cadence '" + s + "'");
}

}  // namespace snnrtrl
